//! Seeded generator of randomized bound-verification cases.

use pairsim::bounds::{self, BoundCase};
use pairsim::simulator::{CellPair, Protocol};
use pairsim::{BundledCurve, CellParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cases drawn per accepted case before giving up.
const MAX_ATTEMPTS: usize = 1000;

/// `count` CC-CV cases over the bundled tabulated curves, all satisfying the
/// input condition. Cells are drawn from 1.5-5 Ah and 20-200 mOhm, initial
/// SOCs from 0.2-0.8 and the current up to the threshold.
pub fn random_cases(count: usize, seed: u64, dt: f64, cycles: usize) -> Vec<BoundCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves = [BundledCurve::NmcGrLike, BundledCurve::LfpGrLike];
    let mut cases = Vec::with_capacity(count);
    let mut attempts = 0;
    while cases.len() < count && attempts < MAX_ATTEMPTS * count.max(1) {
        attempts += 1;
        let curve = curves[rng.gen_range(0..curves.len())];
        let draw_cell = |rng: &mut ChaCha8Rng| CellParams::from_ah_mohm(rng.gen_range(1.5..5.0), rng.gen_range(20.0..200.0));
        let (Ok(c1), Ok(c2)) = (draw_cell(&mut rng), draw_cell(&mut rng)) else {
            continue;
        };
        let z0 = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
        let c_rate = rng.gen_range(0.1..1.0);
        let current = c_rate * (c1.q() + c2.q()) / 3600.0;
        let ocv = curve.curve();
        let params = bounds::bound_params([c1, c2], &[ocv.clone(), ocv.clone()]);
        if !params.input_condition(current) {
            continue;
        }
        let (v_min, v_max) = ocv.voltage_window();
        let cutoff = current / 5.0;
        cases.push(BoundCase {
            pair: CellPair::shared(c1, c2, ocv),
            initial_soc: z0,
            protocol: Protocol::cccv(current, v_max, cutoff, v_min, cycles),
            dt,
        });
    }
    cases
}
