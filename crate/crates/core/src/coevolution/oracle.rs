use crate::error::{Error, Result};
use crate::genome::Genome;
use crate::models::ArchSpec;

/// Largest genome the oracle will enumerate.
pub const ORACLE_MAX_BITS: usize = 20;

/// Fittest genome among every genome with at least one bit per layer.
/// Candidates are visited in lexicographic order of their bit strings
/// (`0 < 1`, layer order), and only a strictly better fitness replaces the
/// incumbent, so ties resolve to the lexicographically lowest genome.
pub fn exhaustive_oracle(spec: &ArchSpec, fitness: impl Fn(&Genome) -> f64, max_bits: usize) -> Result<Genome> {
    let template = Genome::ones(spec);
    let n = template.len();
    let cap = max_bits.min(ORACLE_MAX_BITS);
    if n > cap {
        return Err(Error::contract(format!("genome has {n} bits, oracle limit is {cap}")));
    }
    let mut best: Option<(f64, Genome)> = None;
    for code in 0u64..(1u64 << n) {
        let g = template.with_bits((0..n).map(|i| code >> (n - 1 - i) & 1 == 1));
        if !g.is_repaired() {
            continue;
        }
        let f = fitness(&g);
        if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
            best = Some((f, g));
        }
    }
    best.map(|(_, g)| g).ok_or_else(|| Error::contract("no genome with a set bit in every layer"))
}
