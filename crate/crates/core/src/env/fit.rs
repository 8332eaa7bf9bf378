/// Smallest start offset `t0` such that rows `[t0, t0 + dur)` all have at
/// least `n` free processors and the job ends within the horizon.
///
/// `occupancy[r]` is the number of busy processors `r` timesteps ahead; the
/// horizon is `occupancy.len()`.
pub fn earliest_fit(occupancy: &[u32], capacity: u32, n: u32, dur: u32) -> Option<usize> {
    let horizon = occupancy.len();
    let dur = dur as usize;
    if n > capacity || dur > horizon || dur == 0 {
        return None;
    }
    let blocked = |r: usize| occupancy[r] + n > capacity;
    let mut t0 = 0;
    while t0 + dur <= horizon {
        match (t0..t0 + dur).rev().find(|&r| blocked(r)) {
            None => return Some(t0),
            Some(r) => t0 = r + 1,
        }
    }
    None
}
