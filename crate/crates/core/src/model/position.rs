/// Maps a key-minus-query offset to a relative-attention bucket.
///
/// Small distances each get their own bucket; larger ones share buckets on a
/// logarithmic scale up to `max_distance`, beyond which everything lands in
/// the last bucket. In bidirectional mode half the buckets are reserved for
/// keys after the query.
pub fn relative_position_bucket(
    relative_position: i64,
    bidirectional: bool,
    num_buckets: usize,
    max_distance: usize,
) -> usize {
    let mut buckets = num_buckets as i64;
    let mut ret = 0i64;
    let mut n = -relative_position;
    if bidirectional {
        buckets /= 2;
        if n < 0 {
            ret += buckets;
        }
        n = n.abs();
    } else {
        n = n.max(0);
    }
    let max_exact = buckets / 2;
    if n < max_exact {
        return (ret + n) as usize;
    }
    let scaled = (n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (buckets - max_exact) as f64;
    let large = (max_exact + scaled as i64).min(buckets - 1);
    (ret + large) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance_is_bucket_zero() {
        assert_eq!(relative_position_bucket(0, true, 32, 128), 0);
        assert_eq!(relative_position_bucket(0, false, 32, 128), 0);
    }

    #[test]
    fn future_keys_use_upper_half() {
        assert_eq!(relative_position_bucket(1, true, 32, 128), 17);
        assert_eq!(relative_position_bucket(-1, true, 32, 128), 1);
        // unidirectional clamps future keys to bucket 0
        assert_eq!(relative_position_bucket(5, false, 32, 128), 0);
    }

    #[test]
    fn clamps_beyond_max_distance() {
        assert_eq!(relative_position_bucket(-10_000, true, 32, 128), 15);
        assert_eq!(relative_position_bucket(10_000, true, 32, 128), 31);
        assert_eq!(relative_position_bucket(-10_000, false, 32, 128), 31);
    }

    #[test]
    fn unidirectional_is_monotone_in_distance() {
        let mut prev = 0;
        for p in (-1000..=0).rev() {
            let b = relative_position_bucket(p, false, 32, 128);
            assert!(b >= prev, "bucket({p}) = {b} < {prev}");
            assert!(b < 32);
            prev = b;
        }
    }
}
