//! Randomized harnesses shared by the integration tests and the acceptance run.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use znn::convolution::{ConvMode, Kernel};
use znn::netgraph::{layered, EdgeOp, LayeredSpec, NetGraph};
use znn::reference;
use znn::scheduler::{run_workers, Accumulate, BucketQueue, ForceAction, SumAccumulator, Ticket, UpdateCell};
use znn::taskgraph::{EdgeParam, Network, NetworkConfig, Params, RunOptions, Sample};
use znn::tensor_ops::{Dim3, TransferKind, Volume};

use super::random_volume;

/// Copies `p` onto `g`, taking kernel sparsity from `g`'s edges.
pub fn resparsify(p: &Params<f64>, g: &NetGraph) -> Params<f64> {
    Params {
        edges: p
            .edges
            .iter()
            .zip(g.edges())
            .map(|(p, e)| match (p, e.op) {
                (EdgeParam::Kernel(k), EdgeOp::Conv { sparsity, .. }) => {
                    EdgeParam::Kernel(Kernel { weights: k.weights.clone(), sparsity })
                }
                (p, _) => p.clone(),
            })
            .collect(),
    }
}

/// Net with conv kernels 2³, a transfer and a 2³ max-filter, all of width 2.
pub fn gradient_net() -> NetGraph {
    layered(&LayeredSpec {
        seq: "CTMC".into(),
        width: 2,
        inputs: 1,
        outputs: 2,
        kernel: [2, 2, 2],
        pool: [2, 2, 2],
        transfer: TransferKind::Tanh,
        output: [2, 2, 2],
        lr: None,
    })
    .unwrap()
}

pub struct GradReport {
    pub params: usize,
    pub worst_rel: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Compares the engine's gradient (recovered from one SGD step) with
/// central differences of the loss.
pub fn gradient_check(mode: ConvMode, seed: u64) -> GradReport {
    let g = gradient_net();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p0 = Params::<f64>::init(&g, seed);
    // nonzero biases so the transfer derivative is exercised away from 0
    for p in &mut p0.edges {
        if let EdgeParam::Bias(b) = p {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let sample = Sample {
        inputs: vec![random_volume(&mut rng, g.input_shape(), -1.0, 1.0)],
        desired: g.outputs().iter().map(|_| random_volume(&mut rng, g.output_shape(), -0.5, 0.5)).collect(),
    };
    let lr = 1e-3;
    let cfg = NetworkConfig { conv: vec![mode; g.edges().len()], memoize: true, lr };
    let net = Network::new(g.clone(), p0.clone(), cfg).unwrap();
    net.run(1, &|_: usize| Ok(sample.clone()), RunOptions { threads: 2, trace: false }).unwrap();
    let before = p0.flat();
    let after = net.params().flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..before.len() {
        let analytic = (before[i] - after[i]) / lr;
        let mut plus = p0.clone();
        plus.set_flat(i, before[i] + h);
        let mut minus = p0.clone();
        minus.set_flat(i, before[i] - h);
        let fd =
            (reference::loss(&g, &plus, &sample).unwrap() - reference::loss(&g, &minus, &sample).unwrap()) / (2.0 * h);
        worst = worst.max(rel(analytic, fd));
    }
    GradReport { params: before.len(), worst_rel: worst }
}

/// Random small layered net with at least one pooling layer, whose field of
/// view fits in `max_input`.
pub fn random_pooled_net(rng: &mut ChaCha8Rng, max_input: usize) -> NetGraph {
    loop {
        let layers = rng.random_range(2..=5);
        let mut seq = String::new();
        for _ in 0..layers {
            seq.push(['C', 'C', 'T', 'P', 'M'][rng.random_range(0..5)]);
        }
        if !seq.contains('P') {
            continue;
        }
        let spec = LayeredSpec {
            seq,
            width: rng.random_range(1..=2),
            inputs: rng.random_range(1..=2),
            outputs: rng.random_range(1..=2),
            kernel: [rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=3)],
            pool: [2, rng.random_range(1..=2), 2],
            transfer: [TransferKind::Tanh, TransferKind::RectifiedLinear][rng.random_range(0..2)],
            output: [rng.random_range(1..=2), 1, rng.random_range(1..=2)],
            lr: None,
        };
        if let Ok(g) = layered(&spec) {
            if g.input_shape().iter().all(|&d| d <= max_input) {
                return g;
            }
        }
    }
}

/// Accumulated pooling stride at the output nodes.
pub fn output_stride(g: &NetGraph) -> Dim3 {
    let mut stride = vec![[1, 1, 1]; g.nodes().len()];
    for &v in g.topo_order() {
        for &e in g.out_edges(v) {
            let edge = g.edge(e);
            let mut s = stride[v];
            if let EdgeOp::MaxPool(p) = edge.op {
                s = [0, 1, 2].map(|a| s[a] * p.p[a]);
            }
            stride[edge.to] = s;
        }
    }
    stride[g.outputs()[0]]
}

/// Largest deviation between the dense (sliding) net on a large input and
/// the original net applied at every offset of that input.
pub fn sliding_case(seed: u64, max_input: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_pooled_net(&mut rng, max_input - 2);
    let fov = g.input_shape();
    let big: Dim3 = fov.map(|d| d + rng.random_range(0..=2).min(max_input - d));
    let dense = g.to_sliding_equivalent().unwrap().reshaped_from_input(big).unwrap();
    let p = Params::<f64>::init(&g, seed);
    let mut p = p;
    for q in &mut p.edges {
        if let EdgeParam::Bias(b) = q {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    let dp = resparsify(&p, &dense);
    let inputs: Vec<Volume<f64>> = g.inputs().iter().map(|_| random_volume(&mut rng, big, -1.0, 1.0)).collect();
    let out = reference::outputs(&dense, &dp, &inputs).unwrap();
    let stride = output_stride(&g);
    let o = g.output_shape();
    let want = [0, 1, 2].map(|a| big[a] - fov[a] + stride[a] * (o[a] - 1) + 1);
    assert_eq!(dense.output_shape(), want, "dense output extent");
    let mut worst: f64 = 0.0;
    for x in 0..=big[0] - fov[0] {
        for y in 0..=big[1] - fov[1] {
            for z in 0..=big[2] - fov[2] {
                let crops: Vec<Volume<f64>> = inputs.iter().map(|v| v.crop([x, y, z], fov).unwrap()).collect();
                let sparse = reference::outputs(&g, &p, &crops).unwrap();
                for (d, s) in out.iter().zip(&sparse) {
                    for i in 0..s.len() {
                        let [a, b, c] = s.coords(i);
                        let dv = d.get(x + stride[0] * a, y + stride[1] * b, z + stride[2] * c);
                        worst = worst.max((dv - s.as_slice()[i]).abs());
                    }
                }
            }
        }
    }
    worst
}

pub struct SumReport {
    pub trials: usize,
    pub bad_completions: usize,
    pub worst_rel: f64,
}

/// `trials` rounds of `workers` threads each adding one volume to a fresh
/// accumulator that needs `workers` contributions.
pub fn concurrent_sum(trials: usize, workers: usize, side: usize, seed: u64) -> SumReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let vols: Vec<Volume<f64>> = (0..workers).map(|_| random_volume(&mut rng, [side; 3], -1.0, 1.0)).collect();
        let acc = SumAccumulator::new(workers);
        let wins = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for v in &vols {
                let (acc, wins) = (&acc, &wins);
                s.spawn(move || {
                    if acc.add_to_sum(v.clone()) {
                        wins.fetch_add(1, Ordering::SeqCst);
                    }
                });
            }
        });
        if wins.load(Ordering::SeqCst) != 1 || !acc.is_complete() {
            bad += 1;
            continue;
        }
        let got = acc.take();
        let mut oracle = vec![0.0f64; vols[0].len()];
        for v in &vols {
            for (o, x) in oracle.iter_mut().zip(v.as_slice()) {
                *o += x;
            }
        }
        let scale = oracle.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in got.as_slice().iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / scale);
        }
    }
    SumReport { trials, bad_completions: bad, worst_rel: worst }
}

#[derive(Clone, Copy, Debug)]
enum StressTask {
    Update(usize, usize),
    Forward(usize, usize),
}

#[derive(Debug, Default)]
pub struct ForceReport {
    pub subtasks: usize,
    /// Subtasks that ran a number of times other than one.
    pub misrun: usize,
    /// Subtasks that ran before their edge's update.
    pub out_of_order: usize,
    pub attached: u64,
    pub attached_run: u64,
    pub completed: u64,
    pub queued: u64,
    pub executing: u64,
    /// Longest time any worker spent inside `force`.
    pub max_force: Duration,
    pub update_time: Duration,
}

/// Forward tasks force their edge's pending update while other workers pop
/// and execute updates; updates take `update_time`, far longer than any
/// legitimate stay inside `force`.
pub fn force_stress(seed: u64, workers: usize, edges: usize, rounds: usize, update_time: Duration) -> ForceReport {
    let queue = BucketQueue::<StressTask>::new();
    let cells: Vec<UpdateCell<(usize, usize)>> = (0..edges).map(|_| UpdateCell::new()).collect();
    let applied: Vec<AtomicUsize> = (0..edges).map(|_| AtomicUsize::new(0)).collect();
    let runs: Vec<AtomicUsize> = (0..edges * rounds).map(|_| AtomicUsize::new(0)).collect();
    let out_of_order = AtomicUsize::new(0);
    let attached_run = AtomicU64::new(0);
    let force_ns: Vec<AtomicU64> = (0..workers).map(|_| AtomicU64::new(0)).collect();
    let rng = Mutex::new(ChaCha8Rng::seed_from_u64(seed));
    let key = || rng.lock().unwrap().random_range(0..4u64);
    let jitter = || Duration::from_micros(rng.lock().unwrap().random_range(0..300));

    let push_round = |e: usize, r: usize| {
        cells[e].enqueue_with(|| queue.push(key(), StressTask::Update(e, r)));
        // sometimes hold the forward back so the update can finish first
        if rng.lock().unwrap().random_range(0..3) == 0 {
            std::thread::sleep(update_time * 2);
        }
        queue.push(key(), StressTask::Forward(e, r));
    };
    let do_update = |e: usize| {
        std::thread::sleep(update_time + jitter());
        applied[e].fetch_add(1, Ordering::SeqCst);
    };
    let run_sub = |(e, r): (usize, usize)| {
        if applied[e].load(Ordering::SeqCst) != r + 1 {
            out_of_order.fetch_add(1, Ordering::SeqCst);
        }
        runs[e * rounds + r].fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(jitter());
        if r + 1 < rounds {
            push_round(e, r + 1);
        }
    };
    for e in 0..edges {
        push_round(e, 0);
    }
    run_workers(&queue, workers, |w, _, task| {
        match task {
            StressTask::Update(e, _) => {
                cells[e].begin();
                do_update(e);
                if let Some(sub) = cells[e].finish() {
                    attached_run.fetch_add(1, Ordering::SeqCst);
                    run_sub(sub);
                }
            }
            StressTask::Forward(e, r) => {
                let t0 = Instant::now();
                let act = cells[e].force((e, r), |t: Ticket| queue.remove_specific(t));
                force_ns[w].fetch_max(t0.elapsed().as_nanos() as u64, Ordering::SeqCst);
                match act {
                    ForceAction::Run(sub) => run_sub(sub),
                    ForceAction::RunUpdateThen(sub) => {
                        do_update(e);
                        assert!(cells[e].finish().is_none(), "attachment on a removed update");
                        run_sub(sub);
                    }
                    ForceAction::Attached => {}
                }
            }
        }
        Ok(())
    })
    .unwrap();

    let mut rep = ForceReport {
        subtasks: edges * rounds,
        misrun: runs.iter().filter(|r| r.load(Ordering::SeqCst) != 1).count(),
        out_of_order: out_of_order.load(Ordering::SeqCst),
        attached_run: attached_run.load(Ordering::SeqCst),
        max_force: Duration::from_nanos(force_ns.iter().map(|a| a.load(Ordering::SeqCst)).max().unwrap_or(0)),
        update_time,
        ..Default::default()
    };
    for c in &cells {
        let s = c.stats();
        rep.completed += s.completed;
        rep.queued += s.queued;
        rep.executing += s.executing;
        rep.attached += s.executing + s.lost_races;
    }
    rep
}

/// Random push/pop/remove sequence checked against a sorted map.
pub fn queue_oracle(ops: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = BucketQueue::<u64>::new();
    let mut oracle: BTreeMap<(u64, u64), u64> = BTreeMap::new();
    let mut tickets: Vec<(Ticket, u64)> = Vec::new();
    for step in 0..ops {
        match rng.random_range(0..10) {
            0..=4 => {
                let key = rng.random_range(0..16);
                let t = q.push(key, step as u64);
                // ids grow with push order, so push order breaks ties
                oracle.insert((key, step as u64), step as u64);
                tickets.push((t, step as u64));
            }
            5..=7 => {
                let want = oracle.pop_first().map(|((k, _), v)| (k, v));
                let got = q.try_pop();
                if got != want {
                    return Err(format!("step {step}: popped {got:?}, oracle {want:?}"));
                }
                if got.is_some() {
                    q.task_done();
                }
            }
            _ => {
                if tickets.is_empty() {
                    continue;
                }
                let (t, seq) = tickets[rng.random_range(0..tickets.len())];
                let want = oracle.remove(&(t.key(), seq)).is_some();
                let got = q.remove_specific(t);
                if got != want {
                    return Err(format!("step {step}: remove returned {got}, oracle {want}"));
                }
            }
        }
        if q.len() != oracle.len() {
            return Err(format!("step {step}: length {} vs oracle {}", q.len(), oracle.len()));
        }
    }
    Ok(())
}

/// Volume whose accumulation ends by streaming through a shared buffer, so
/// every guard acquisition starts from the same cache state whatever the
/// volume size.
struct Scrubbed<'a> {
    vol: Volume<f32>,
    scrub: &'a [u64],
}

impl Accumulate for Scrubbed<'_> {
    fn accumulate(&mut self, other: &Self) {
        self.vol.add_assign(&other.vol);
        scrub(self.scrub);
    }
}

fn scrub(buf: &[u64]) {
    std::hint::black_box(buf.iter().fold(0u64, |a, &b| a.wrapping_add(b)));
}

/// Mean guard-held time per acquisition for batches at each volume side,
/// with sides interleaved in random order. A non-zero `scrub_bytes` holds
/// the cache state at guard entry fixed across sizes.
pub fn guard_samples(sides: &[usize], batches: usize, adds: usize, scrub_bytes: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..batches).flat_map(|_| sides.iter().copied()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let protos: BTreeMap<usize, Volume<f32>> =
        sides.iter().map(|&s| (s, random_volume(&mut rng, [s; 3], -1.0, 1.0))).collect();
    let buf: Vec<u64> = (0..scrub_bytes / 8).map(|i| i as u64).collect();
    let mut out = Vec::new();
    for side in order {
        let acc = SumAccumulator::new(adds);
        let v = &protos[&side];
        std::thread::scope(|s| {
            for _ in 0..2 {
                s.spawn(|| {
                    for _ in 0..adds / 2 {
                        let x = Scrubbed { vol: v.clone(), scrub: &buf };
                        scrub(&buf);
                        acc.add_to_sum(x);
                    }
                });
            }
        });
        let st = acc.stats();
        out.push(((side * side * side) as f64, st.held_ns as f64 / st.acquisitions as f64));
    }
    out
}

/// Least-squares slope of `y` on `x` and the half width of its 95% interval.
pub fn slope_ci(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = points.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let se = (resid / (n - 2.0) / sxx).sqrt();
    // normal quantile; the sample counts used are large
    (slope, 1.96 * se)
}

/// A fixed training net for pool and determinism checks.
pub fn fixed_net() -> NetGraph {
    layered(&LayeredSpec {
        seq: "CTMCTCT".into(),
        width: 4,
        kernel: [3, 3, 3],
        output: [4, 4, 4],
        ..LayeredSpec::default()
    })
    .unwrap()
}
