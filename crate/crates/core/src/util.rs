use chrono::{DateTime, Datelike, Months, NaiveDate, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mean Gregorian month length in seconds (365.2425 days / 12).
pub const MEAN_MONTH_SECS: f64 = 2_629_746.0;

pub const SECS_PER_DAY: i64 = 86_400;

/// SplitMix64 finalizer; used to derive independent stream seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Stable 64-bit FNV-1a hash of a string, for seed derivation.
pub fn str_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn datetime(ts: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(ts, 0)
        .single()
        .unwrap_or(DateTime::<Utc>::MIN_UTC)
}

/// Calendar month index (year * 12 + month0) of a UTC timestamp.
pub fn month_index(ts: i64) -> i64 {
    let dt = datetime(ts);
    dt.year() as i64 * 12 + dt.month0() as i64
}

/// Days since the Unix epoch, UTC.
pub fn day_index(ts: i64) -> i64 {
    ts.div_euclid(SECS_PER_DAY)
}

pub fn days_in_month(month_index: i64) -> u32 {
    let year = month_index.div_euclid(12) as i32;
    let month = month_index.rem_euclid(12) as u32 + 1;
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    let next = first + Months::new(1);
    (next - first).num_days() as u32
}

#[cfg(test)]
/// Timestamp of midnight UTC on the first day of the given month index.
pub fn month_start_ts(month_index: i64) -> i64 {
    let year = month_index.div_euclid(12) as i32;
    let month = month_index.rem_euclid(12) as u32 + 1;
    NaiveDate::from_ymd_opt(year, month, 1)
        .expect("valid month")
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
        .and_utc()
        .timestamp()
}
