use crate::profile::HardwareProfile;

/// Divisors of the profile's unit count, ascending.
pub fn parallel_grid(profile: &HardwareProfile) -> Vec<u32> {
    (1..=profile.unit_count).filter(|p| profile.unit_count.is_multiple_of(*p)).collect()
}

/// Powers of two from the lane width up to the unit-level capacity.
pub fn tile_grid(profile: &HardwareProfile) -> Vec<u64> {
    let cap = profile.unit_level().capacity;
    let mut t = (profile.lane_width.max(1) as u64).next_power_of_two();
    let mut out = Vec::new();
    while t <= cap {
        out.push(t);
        t *= 2;
    }
    out
}

/// (units, tile) pairs covering `n` elements in whole tiles. A unit count
/// that no grid tile fits gets one tile of `n / units` per unit.
pub fn cyclic_params(n: u64, profile: &HardwareProfile) -> Vec<(u32, u64)> {
    let mut out = Vec::new();
    for p in parallel_grid(profile) {
        let before = out.len();
        for t in tile_grid(profile) {
            if n.is_multiple_of(p as u64 * t) {
                out.push((p, t));
            }
        }
        if out.len() == before && n.is_multiple_of(p as u64) {
            out.push((p, n / p as u64));
        }
    }
    out
}
