//! Timing and multiplication counts for proof generation and verification.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use ncaudit_core::audit::{self, Challenge, KeyMaterial, MissingBlockPolicy, NodeStore, Proof, Role};
use ncaudit_core::blocks::{CodedBlock, FileManifest, SystemParams};
use ncaudit_core::cost::{self, Phase};
use ncaudit_core::ncrypt::{self, MaskPrecomputation};
use ncaudit_core::spacemac::SpaceMac;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub block_kb: usize,
    pub m: usize,
    pub challenge: usize,
    pub ell: usize,
    pub trials: usize,
    pub lambda: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            block_kb: 4,
            m: 500,
            challenge: 300,
            ell: 10,
            trials: 100,
            lambda: 80,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn n(&self) -> usize {
        self.block_kb * 1024
    }
}

/// Median, mean and extremes of a sample, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ms: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl Timing {
    pub fn from_samples(samples: &mut [f64]) -> Timing {
        assert!(!samples.is_empty(), "at least one sample");
        samples.sort_by(f64::total_cmp);
        let k = samples.len();
        let median = if k % 2 == 1 {
            samples[k / 2]
        } else {
            (samples[k / 2 - 1] + samples[k / 2]) / 2.0
        };
        Timing {
            median_ms: median,
            mean_ms: samples.iter().sum::<f64>() / k as f64,
            min_ms: samples[0],
            max_ms: samples[k - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub gen_proof: Timing,
    pub verify_proof: Timing,
    /// Data aggregation multiplications in one gen_proof (mask precomputed).
    pub gen_proof_block_mults: u64,
    /// Tag aggregation multiplications in the same call.
    pub gen_proof_tag_mults: u64,
    pub gen_proof_total_mults: u64,
    pub verify_mults: u64,
    /// `C·n`.
    pub expected_gen_proof_mults: u64,
    /// `C·m + ℓ(n+m)`.
    pub expected_verify_mults: u64,
    /// `(λ/8 + 1 + 2) / n`: nonce, one mask scalar and the two clear padding symbols.
    pub overhead_single_tag: f64,
    /// Same with the ℓ mask scalars actually sent.
    pub overhead_wire: f64,
    pub proof_bytes: usize,
    pub all_accepted: bool,
}

/// Encryption bandwidth overhead relative to an `n`-symbol block.
pub fn overhead_ratio(n: usize, lambda: usize, mask_scalars: usize) -> f64 {
    (lambda / 8 + mask_scalars + 2) as f64 / n as f64
}

/// One node holding `C` random coded blocks with valid tags, and what the
/// auditor needs to check it.
pub struct BenchFixture {
    pub params: SystemParams,
    pub store: NodeStore,
    pub manifest: FileManifest,
    pub mac: SpaceMac,
}

impl BenchFixture {
    pub fn new(cfg: &BenchConfig) -> Result<Self, CliError> {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        // Only the first node is materialized; the node count just has to be
        // large enough for the parameters to hold m dimensions.
        let params = SystemParams {
            m: cfg.m,
            nodes: cfg.m.div_ceil(cfg.challenge.max(1)).max(1),
            blocks_per_node: cfg.challenge,
            helpers: 1,
            repair_blocks: 1,
            lambda: cfg.lambda,
            ..SystemParams::evenodd4(cfg.n(), cfg.ell)
        };
        params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let keys: KeyMaterial = audit::keygen(&params, &mut rng)?;
        let file_id = "bench";
        let mac = SpaceMac::new(keys.verification_key(Role::User)?, file_id, cfg.ell);
        let k_e = keys.encryption_key(Role::User)?.clone();
        let aux = ncrypt::setup(&k_e, &mac, params.n)?;
        let blocks: Vec<CodedBlock> = (0..cfg.challenge)
            .map(|_| CodedBlock::random(params.n, params.m, &mut rng))
            .collect();
        let tags = blocks.iter().map(|b| mac.mac(b)).collect::<Result<Vec<_>, _>>()?;
        let manifest = FileManifest {
            file_id: file_id.into(),
            params,
            file_len: 0,
            node_coeffs: vec![blocks.iter().map(|b| b.coeffs()).collect()],
            payload_lens: Vec::new(),
            mapping: Default::default(),
            deltas: Vec::new(),
        };
        let tpa_mac = SpaceMac::new(keys.verification_key(Role::Tpa)?, file_id, cfg.ell);
        Ok(BenchFixture {
            params,
            store: NodeStore::new(blocks, tags, aux, k_e),
            manifest,
            mac: tpa_mac,
        })
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, CliError> {
    if cfg.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    let fx = BenchFixture::new(cfg)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ 0xbe9c);
    let mut gen_samples = Vec::with_capacity(cfg.trials);
    let mut verify_samples = Vec::with_capacity(cfg.trials);
    let mut all_accepted = true;
    let mut proof_bytes = 0;

    // Warm the r-vector cache so verification timing is steady state.
    let warm = audit::gen_challenge(&fx.manifest, 0, cfg.challenge, &mut rng)?;
    let proof = audit::gen_proof(&fx.store, &warm, MissingBlockPolicy::Strict, &mut rng)?;
    audit::verify_proof(&fx.mac, &fx.manifest, 0, &warm, &proof)?;

    let mut counts = None;
    for trial in 0..cfg.trials {
        let chal = audit::gen_challenge(&fx.manifest, 0, cfg.challenge, &mut rng)?;
        let mask = MaskPrecomputation::new(&fx.store.k_e, &fx.store.aux, &mut rng)?;

        let start = Instant::now();
        let proof = audit::gen_proof_precomputed(&fx.store, &chal, &mask, MissingBlockPolicy::Strict, &mut rng)?;
        gen_samples.push(ms(start));
        let bytes = proof.to_bytes();
        proof_bytes = bytes.len();
        let proof = Proof::from_bytes(&bytes, &fx.params)?;

        let start = Instant::now();
        let ok = audit::verify_proof(&fx.mac, &fx.manifest, 0, &chal, &proof)?;
        verify_samples.push(ms(start));
        all_accepted &= ok;

        if trial == 0 {
            counts = Some(count_mults(&fx, &chal, &mask)?);
        }
    }
    let (gen_tally, verify_total) = counts.expect("at least one trial");
    let (c, n, m, ell) = (cfg.challenge as u64, cfg.n() as u64, cfg.m as u64, cfg.ell as u64);
    Ok(BenchReport {
        config: *cfg,
        gen_proof: Timing::from_samples(&mut gen_samples),
        verify_proof: Timing::from_samples(&mut verify_samples),
        gen_proof_block_mults: gen_tally.get(Phase::BlockAggregation),
        gen_proof_tag_mults: gen_tally.get(Phase::TagAggregation),
        gen_proof_total_mults: gen_tally.total(),
        verify_mults: verify_total,
        expected_gen_proof_mults: c * n,
        expected_verify_mults: c * m + ell * (n + m),
        overhead_single_tag: overhead_ratio(cfg.n(), cfg.lambda, 1),
        overhead_wire: overhead_ratio(cfg.n(), cfg.lambda, cfg.ell),
        proof_bytes,
        all_accepted,
    })
}

/// Instrumented gen_proof (with `mask`) and verify_proof for one challenge.
pub fn count_mults(
    fx: &BenchFixture,
    chal: &Challenge,
    mask: &MaskPrecomputation,
) -> Result<(cost::MulTally, u64), CliError> {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let (proof, gen_tally) =
        cost::measure(|| audit::gen_proof_precomputed(&fx.store, chal, mask, MissingBlockPolicy::Strict, &mut rng));
    let proof = proof?;
    let (ok, verify_tally) = cost::measure(|| audit::verify_proof(&fx.mac, &fx.manifest, 0, chal, &proof));
    ok?;
    Ok((gen_tally, verify_tally.total()))
}

impl BenchReport {
    pub fn summary(&self) -> String {
        let c = &self.config;
        format!(
            "blocks {} KB, m={}, C={}, l={}, lambda={}, {} trials\n\
             gen_proof    median {:.3} ms  mean {:.3} ms  ({} block mults, expected C*n = {}; {} tag mults)\n\
             verify_proof median {:.3} ms  mean {:.3} ms  ({} mults, expected C*m + l(n+m) = {})\n\
             overhead {:.4}% with one mask scalar, {:.4}% with {} on the wire; proof {} bytes; all accepted: {}",
            c.block_kb,
            c.m,
            c.challenge,
            c.ell,
            c.lambda,
            c.trials,
            self.gen_proof.median_ms,
            self.gen_proof.mean_ms,
            self.gen_proof_block_mults,
            self.expected_gen_proof_mults,
            self.gen_proof_tag_mults,
            self.verify_proof.median_ms,
            self.verify_proof.mean_ms,
            self.verify_mults,
            self.expected_verify_mults,
            self.overhead_single_tag * 100.0,
            self.overhead_wire * 100.0,
            c.ell,
            self.proof_bytes,
            self.all_accepted,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd_samples() {
        assert_eq!(Timing::from_samples(&mut [3.0, 1.0, 2.0]).median_ms, 2.0);
        let t = Timing::from_samples(&mut [4.0, 1.0, 2.0, 3.0]);
        assert_eq!(t.median_ms, 2.5);
        assert_eq!(t.mean_ms, 2.5);
        assert_eq!((t.min_ms, t.max_ms), (1.0, 4.0));
    }

    #[test]
    fn overhead_at_lambda_80() {
        assert_eq!(overhead_ratio(4096, 80, 1), 13.0 / 4096.0);
    }

    #[test]
    fn small_bench_counts_match() {
        let cfg = BenchConfig {
            block_kb: 1,
            m: 20,
            challenge: 7,
            ell: 3,
            trials: 3,
            lambda: 128,
            seed: 1,
        };
        let r = run_bench(&cfg).unwrap();
        assert!(r.all_accepted);
        assert_eq!(r.gen_proof_block_mults, r.expected_gen_proof_mults);
        assert_eq!(r.gen_proof_tag_mults, 7 * 3);
        assert_eq!(r.verify_mults, r.expected_verify_mults);
        assert_eq!(r.proof_bytes, 1022 + 16 + 2 + 6);
    }
}
