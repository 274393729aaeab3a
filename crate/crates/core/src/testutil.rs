use crate::hierarchy::Hierarchy;

/// `T; A, B; AA, AB, BA, BB, BC`.
pub fn two_level() -> Hierarchy {
    Hierarchy::new([
        ("T", None),
        ("A", Some("T")),
        ("B", Some("T")),
        ("AA", Some("A")),
        ("AB", Some("A")),
        ("BA", Some("B")),
        ("BB", Some("B")),
        ("BC", Some("B")),
    ])
    .unwrap()
}

/// Deterministic values in (-1, 1).
pub fn lcg(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}
