use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use znn::mempool::{ChunkPool, PoolStats};

/// Rounds of `n` simultaneously live chunks with log-uniform sizes in
/// `[64 B, 1 MiB)`, all released at the end of each round.
pub fn synthetic_footprint(rounds: usize, n: usize, seed: u64) -> PoolStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = ChunkPool::new(64);
    for _ in 0..rounds {
        let live: Vec<_> = (0..n)
            .map(|_| {
                let lg: f64 = rng.random_range(6.0..20.0);
                pool.acquire(lg.exp2() as usize)
            })
            .collect();
        for c in live {
            pool.release(c);
        }
    }
    pool.stats()
}

pub fn footprint_ratio(s: &PoolStats) -> f64 {
    s.system_bytes as f64 / s.peak_live_bytes as f64
}
