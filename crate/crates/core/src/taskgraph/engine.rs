use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use crate::convolution::{
    conv_full_direct, conv_valid_direct, gradient_from_spectra, kernel_gradient, kernel_spectrum, transpose_product,
    valid_product, ConvMode, FftPlanCache, Kernel, MemoKey, MemoOwner, MemoRole, MemoStore, Pass, Spectrum,
    TransformCounts, TransformKind,
};
use crate::error::{Error, Result};
use crate::mempool::{ChunkPool, PoolStats};
use crate::netgraph::{compute_priorities, EdgeId, EdgeOp, NetGraph, NodeId, NodeRole, PriorityTable};
use crate::scheduler::{
    run_workers, Accumulate, BucketQueue, ForceAction, ForceStats, GuardStats, SumAccumulator, UpdateCell, UpdateState,
    WorkerStats,
};
use crate::tensor_ops::{
    bias_gradient, maxfilter_backward, maxfilter_forward, maxpool_backward, maxpool_forward, transfer_backward,
    transfer_forward, ArgmaxRecord, Dim3, Scalar, TransferFn, Volume,
};

use super::graph::TaskKind;
use super::loss::loss_and_gradient;
use super::params::{EdgeParam, Params};

/// One training example: an image per input node and a desired image per
/// output node, both in node-id order.
#[derive(Clone, Debug)]
pub struct Sample<T: Scalar> {
    pub inputs: Vec<Volume<T>>,
    pub desired: Vec<Volume<T>>,
}

pub trait DataSource<T: Scalar>: Sync {
    fn sample(&self, round: usize) -> Result<Sample<T>>;
}

impl<T: Scalar, F: Fn(usize) -> Result<Sample<T>> + Sync> DataSource<T> for F {
    fn sample(&self, round: usize) -> Result<Sample<T>> {
        self(round)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Convolution engine per edge; ignored for other edge types.
    pub conv: Vec<ConvMode>,
    pub memoize: bool,
    pub lr: f64,
}

impl NetworkConfig {
    pub fn uniform(g: &NetGraph, mode: ConvMode) -> Self {
        NetworkConfig { conv: vec![mode; g.edges().len()], memoize: true, lr: 0.01 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub threads: usize,
    pub trace: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskLabel {
    Data(usize),
    Forward(EdgeId, usize),
    Backward(EdgeId, usize),
    Update(EdgeId, usize),
    Loss(NodeId, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub worker: usize,
    pub task: TaskLabel,
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    /// Total loss over all output nodes, per round.
    pub losses: Vec<f64>,
    /// Interval between consecutive round starts (the last one ends with the run).
    pub round_times: Vec<Duration>,
    pub elapsed: Duration,
    pub transforms: TransformCounts,
    pub workers: WorkerStats,
    pub force: ForceStats,
    pub guard: GuardStats,
    /// Completed fills of each node's forward and backward sums.
    pub fwd_fills: Vec<u64>,
    pub bwd_fills: Vec<u64>,
    pub trace: Vec<TraceEvent>,
    pub pool: PoolStats,
}

enum Slot<T: Scalar> {
    Kernel(Arc<Kernel<T>>),
    Bias(T),
    Fixed,
}

/// A network ready to train: graph, parameters and the shared resources
/// (buffer pool, FFT plans, spectrum cache) its tasks use.
pub struct Network<T: Scalar> {
    graph: NetGraph,
    priorities: PriorityTable,
    cfg: NetworkConfig,
    params: Vec<Mutex<Slot<T>>>,
    pool: Arc<ChunkPool>,
    fft: FftPlanCache<T>,
    memo: MemoStore<T>,
    fwd_spectral: Vec<bool>,
    bwd_spectral: Vec<bool>,
}

impl<T: Scalar> Network<T> {
    pub fn new(graph: NetGraph, params: Params<T>, cfg: NetworkConfig) -> Result<Self> {
        let ne = graph.edges().len();
        if params.edges.len() != ne || cfg.conv.len() != ne {
            return Err(Error::Config("parameter or mode list does not match the edge count".into()));
        }
        let pool = ChunkPool::for_volumes();
        let mut slots = Vec::with_capacity(ne);
        for (e, p) in params.edges.into_iter().enumerate() {
            let slot = match (graph.edge(e).op, p) {
                (EdgeOp::Conv { kernel, sparsity }, EdgeParam::Kernel(k)) => {
                    if k.dims() != kernel || k.sparsity != sparsity {
                        return Err(Error::Config(format!(
                            "kernel of edge `{}` has the wrong shape",
                            graph.edge(e).name
                        )));
                    }
                    let w = Volume::from_slice_in(&pool, kernel, k.weights.as_slice())?;
                    Slot::Kernel(Arc::new(Kernel { weights: w, sparsity }))
                }
                (EdgeOp::Transfer { .. }, EdgeParam::Bias(b)) => Slot::Bias(b),
                (EdgeOp::MaxPool(_) | EdgeOp::MaxFilter(_), EdgeParam::Fixed) => Slot::Fixed,
                _ => return Err(Error::Config(format!("parameter kind does not fit edge `{}`", graph.edge(e).name))),
            };
            slots.push(Mutex::new(slot));
        }
        let is_fft = |e: EdgeId| graph.edge(e).op.is_conv() && cfg.conv[e] == ConvMode::Fft;
        let fwd_spectral = (0..graph.nodes().len())
            .map(|v| {
                let ins = graph.in_edges(v);
                !ins.is_empty()
                    && ins.iter().all(|&e| is_fft(e))
                    && ins.iter().all(|&e| graph.shape(graph.edge(e).from) == graph.shape(graph.edge(ins[0]).from))
            })
            .collect();
        let bwd_spectral = (0..graph.nodes().len())
            .map(|v| {
                let outs = graph.out_edges(v);
                !outs.is_empty() && outs.iter().all(|&e| is_fft(e))
            })
            .collect();
        Ok(Network {
            priorities: compute_priorities(&graph),
            graph,
            cfg,
            params: slots,
            pool,
            fft: FftPlanCache::new(),
            memo: MemoStore::new(),
            fwd_spectral,
            bwd_spectral,
        })
    }

    pub fn graph(&self) -> &NetGraph {
        &self.graph
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn pool(&self) -> &Arc<ChunkPool> {
        &self.pool
    }

    pub fn fft(&self) -> &FftPlanCache<T> {
        &self.fft
    }

    pub fn memo(&self) -> &MemoStore<T> {
        &self.memo
    }

    pub fn params(&self) -> Params<T> {
        Params {
            edges: self
                .params
                .iter()
                .map(|s| match &*s.lock().expect("param lock") {
                    Slot::Kernel(k) => EdgeParam::Kernel((**k).clone()),
                    Slot::Bias(b) => EdgeParam::Bias(*b),
                    Slot::Fixed => EdgeParam::Fixed,
                })
                .collect(),
        }
    }

    fn kernel(&self, e: EdgeId) -> Arc<Kernel<T>> {
        match &*self.params[e].lock().expect("param lock") {
            Slot::Kernel(k) => Arc::clone(k),
            _ => unreachable!("edge {e} has no kernel"),
        }
    }

    fn bias(&self, e: EdgeId) -> T {
        match &*self.params[e].lock().expect("param lock") {
            Slot::Bias(b) => *b,
            _ => unreachable!("edge {e} has no bias"),
        }
    }

    fn lr(&self, e: EdgeId) -> T {
        T::of(self.graph.edge(e).lr.unwrap_or(self.cfg.lr))
    }

    /// Runs `rounds` gradient iterations, pipelining consecutive rounds.
    pub fn run(&self, rounds: usize, source: &dyn DataSource<T>, opts: RunOptions) -> Result<RunReport> {
        if rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        let threads = opts.threads.max(1);
        let g = &self.graph;
        let n = g.nodes().len();
        let ne = g.edges().len();
        let sums = |count: &dyn Fn(NodeId) -> usize, skip: NodeRole| {
            (0..n).map(|v| (g.node(v).role != skip).then(|| SumAccumulator::new(count(v)))).collect::<Vec<_>>()
        };
        let input_edges = g.inputs().iter().map(|&v| g.out_edges(v).len()).sum();
        let run = Run {
            net: self,
            rounds,
            source,
            queue: BucketQueue::new(),
            fwd_sums: sums(&|v| g.in_edges(v).len(), NodeRole::Input),
            bwd_sums: sums(&|v| g.out_edges(v).len(), NodeRole::Output),
            cells: (0..ne).map(|_| UpdateCell::new()).collect(),
            payloads: (0..ne).map(|_| Mutex::new(None)).collect(),
            records: (0..ne).map(|_| Mutex::new(None)).collect(),
            images: (0..n).map(|_| Mutex::new(None)).collect(),
            desired: Mutex::new(vec![None; g.outputs().len()]),
            input_edges,
            input_bwd_left: AtomicUsize::new(input_edges),
            updates_done: (0..ne).map(|_| AtomicUsize::new(0)).collect(),
            losses: Mutex::new(vec![0.0; rounds]),
            starts: Mutex::new(Vec::with_capacity(rounds)),
            trace: opts.trace.then(|| Mutex::new(Vec::new())),
        };
        let before = self.fft.counts();
        let t0 = Instant::now();
        run.push(TaskKind::DataProvider, Task::Data(0));
        let workers = run_workers(&run.queue, threads, |w, _, task| run.execute(w, task));
        self.memo.clear();
        let workers = workers?;
        let elapsed = t0.elapsed();
        for (e, c) in run.cells.iter().enumerate() {
            if c.state() != UpdateState::Completed {
                return Err(Error::Worker(format!("update of edge {e} left in state {:?}", c.state())));
            }
        }
        let mut starts = run.starts.into_inner().expect("starts lock");
        starts.push(t0 + elapsed);
        let round_times = starts.windows(2).map(|w| w[1] - w[0]).collect();
        let fills = |s: &[Option<SumAccumulator<Contribution<T>>>]| {
            s.iter().map(|a| a.as_ref().map_or(0, |a| a.stats().fills)).collect()
        };
        let mut guard = GuardStats::default();
        for s in run.fwd_sums.iter().chain(&run.bwd_sums).flatten() {
            let st = s.stats();
            guard.acquisitions += st.acquisitions;
            guard.held_ns += st.held_ns;
            guard.fills += st.fills;
        }
        Ok(RunReport {
            losses: run.losses.into_inner().expect("loss lock"),
            round_times,
            elapsed,
            transforms: self.fft.counts().since(&before),
            workers,
            force: run.cells.iter().map(|c| c.stats()).fold(ForceStats::default(), |a, b| a + b),
            guard,
            fwd_fills: fills(&run.fwd_sums),
            bwd_fills: fills(&run.bwd_sums),
            trace: run.trace.map(|t| t.into_inner().expect("trace lock")).unwrap_or_default(),
            pool: self.pool.stats(),
        })
    }
}

/// Partial sum at a node, in the spatial or the frequency domain.
enum Contribution<T: Scalar> {
    Spatial(Volume<T>),
    Spectral(Spectrum<T>),
}

impl<T: Scalar> Accumulate for Contribution<T> {
    fn accumulate(&mut self, other: &Self) {
        match (self, other) {
            (Contribution::Spatial(a), Contribution::Spatial(b)) => a.add_assign(b),
            (Contribution::Spectral(a), Contribution::Spectral(b)) => a.accumulate(b),
            _ => panic!("mixed spatial and spectral contributions"),
        }
    }
}

struct FwdSub<T: Scalar> {
    edge: EdgeId,
    round: usize,
    input: Arc<Volume<T>>,
}

enum Task<T: Scalar> {
    Data(usize),
    Forward(FwdSub<T>),
    Backward { edge: EdgeId, round: usize, grad: Arc<Volume<T>> },
    Update(EdgeId),
    Loss { node: NodeId, round: usize, actual: Arc<Volume<T>> },
}

struct UpdatePayload<T: Scalar> {
    round: usize,
    input: Arc<Volume<T>>,
    grad: Arc<Volume<T>>,
}

struct Run<'a, T: Scalar> {
    net: &'a Network<T>,
    rounds: usize,
    source: &'a dyn DataSource<T>,
    queue: BucketQueue<Task<T>>,
    fwd_sums: Vec<Option<SumAccumulator<Contribution<T>>>>,
    bwd_sums: Vec<Option<SumAccumulator<Contribution<T>>>>,
    cells: Vec<UpdateCell<FwdSub<T>>>,
    payloads: Vec<Mutex<Option<UpdatePayload<T>>>>,
    records: Vec<Mutex<Option<ArgmaxRecord>>>,
    /// Forward image of each node for the round in flight.
    images: Vec<Mutex<Option<Arc<Volume<T>>>>>,
    desired: Mutex<Vec<Option<Volume<T>>>>,
    input_edges: usize,
    input_bwd_left: AtomicUsize,
    updates_done: Vec<AtomicUsize>,
    losses: Mutex<Vec<f64>>,
    starts: Mutex<Vec<Instant>>,
    trace: Option<Mutex<Vec<TraceEvent>>>,
}

impl<T: Scalar> Run<'_, T> {
    fn g(&self) -> &NetGraph {
        &self.net.graph
    }

    fn push(&self, kind: TaskKind, task: Task<T>) {
        self.queue.push(kind.priority(&self.net.priorities), task);
    }

    fn record(&self, worker: usize, task: TaskLabel) {
        if let Some(t) = &self.trace {
            t.lock().expect("trace lock").push(TraceEvent { worker, task });
        }
    }

    fn key(&self, round: usize, owner: MemoOwner, role: MemoRole, box_dims: Dim3) -> MemoKey {
        MemoKey { epoch: round as u64, owner, role, box_dims }
    }

    fn execute(&self, w: usize, task: Task<T>) -> Result<()> {
        match task {
            Task::Data(r) => self.data(w, r),
            Task::Forward(sub) => self.forward(w, sub),
            Task::Backward { edge, round, grad } => self.backward(w, edge, round, grad),
            Task::Update(e) => {
                self.cells[e].begin();
                self.update(w, e)?;
                match self.cells[e].finish() {
                    Some(sub) => self.do_forward(w, sub),
                    None => Ok(()),
                }
            }
            Task::Loss { node, round, actual } => self.loss(w, node, round, &actual),
        }
    }

    fn data(&self, w: usize, r: usize) -> Result<()> {
        self.record(w, TaskLabel::Data(r));
        self.starts.lock().expect("starts lock").push(Instant::now());
        if r >= 1 {
            // every update of round r-2 ran before round r-1 finished its forward pass
            self.net.memo.evict_before(r as u64 - 1);
        }
        let sample = self.source.sample(r)?;
        let g = self.g();
        let (ins, outs) = (g.inputs(), g.outputs());
        if sample.inputs.len() != ins.len() || sample.desired.len() != outs.len() {
            return Err(Error::Config(format!(
                "sample has {} inputs and {} labels; the net needs {} and {}",
                sample.inputs.len(),
                sample.desired.len(),
                ins.len(),
                outs.len()
            )));
        }
        {
            let mut desired = self.desired.lock().expect("desired lock");
            for (i, (&v, d)) in outs.iter().zip(&sample.desired).enumerate() {
                if d.dims() != g.shape(v) {
                    return Err(Error::ShapeMismatch { op: "label", expected: g.shape(v), actual: d.dims() });
                }
                desired[i] = Some(Volume::from_slice_in(&self.net.pool, d.dims(), d.as_slice())?);
            }
        }
        for (&v, x) in ins.iter().zip(&sample.inputs) {
            if x.dims() != g.shape(v) {
                return Err(Error::ShapeMismatch { op: "input", expected: g.shape(v), actual: x.dims() });
            }
            let img = Arc::new(Volume::from_slice_in(&self.net.pool, x.dims(), x.as_slice())?);
            *self.images[v].lock().expect("image lock") = Some(Arc::clone(&img));
            for &e in g.out_edges(v) {
                self.push(TaskKind::Forward(e), Task::Forward(FwdSub { edge: e, round: r, input: Arc::clone(&img) }));
            }
        }
        Ok(())
    }

    fn forward(&self, w: usize, sub: FwdSub<T>) -> Result<()> {
        let e = sub.edge;
        if !self.g().edge(e).op.is_trainable() {
            return self.do_forward(w, sub);
        }
        match self.cells[e].force(sub, |t| self.queue.remove_specific(t)) {
            ForceAction::Run(sub) => self.do_forward(w, sub),
            ForceAction::RunUpdateThen(sub) => {
                self.update(w, e)?;
                let attached = self.cells[e].finish();
                debug_assert!(attached.is_none());
                self.do_forward(w, sub)
            }
            ForceAction::Attached => Ok(()),
        }
    }

    fn do_forward(&self, w: usize, sub: FwdSub<T>) -> Result<()> {
        let FwdSub { edge: e, round: r, input: x } = sub;
        self.record(w, TaskLabel::Forward(e, r));
        let net = self.net;
        let edge = self.g().edge(e);
        let (u, v) = (edge.from, edge.to);
        if edge.op.is_trainable() && self.updates_done[e].load(Ordering::Acquire) != r {
            return Err(Error::Worker(format!("forward of edge {e} in round {r} ran before its previous update")));
        }
        let out = match edge.op {
            EdgeOp::Conv { .. } => {
                let k = net.kernel(e);
                match net.cfg.conv[e] {
                    ConvMode::Direct => Contribution::Spatial(conv_valid_direct(&x, &k)?),
                    ConvMode::Fft => {
                        let bx = x.dims();
                        let xs = net
                            .memo
                            .get_or_compute(self.key(r, MemoOwner::Node(u), MemoRole::ForwardImage, bx), || {
                                net.fft.forward(&x, bx, Pass::Forward, TransformKind::Image)
                            });
                        let ks = net.memo.get_or_compute(self.key(r, MemoOwner::Edge(e), MemoRole::Kernel, bx), || {
                            kernel_spectrum(&k, bx, &net.fft, Pass::Forward)
                        });
                        let prod = valid_product(&xs, &ks);
                        if net.fwd_spectral[v] {
                            Contribution::Spectral(prod)
                        } else {
                            Contribution::Spatial(net.fft.inverse(&prod, self.g().shape(v), Pass::Forward))
                        }
                    }
                }
            }
            EdgeOp::Transfer { kind } => {
                Contribution::Spatial(transfer_forward(&x, &TransferFn { kind, bias: net.bias(e) }))
            }
            EdgeOp::MaxPool(p) => {
                let (y, rec) = maxpool_forward(&x, &p)?;
                *self.records[e].lock().expect("record lock") = Some(rec);
                Contribution::Spatial(y)
            }
            EdgeOp::MaxFilter(f) => {
                let (y, rec) = maxfilter_forward(&x, &f)?;
                *self.records[e].lock().expect("record lock") = Some(rec);
                Contribution::Spatial(y)
            }
        };
        drop(x);
        let sum = self.fwd_sums[v].as_ref().expect("forward sum");
        if !sum.add_to_sum(out) {
            return Ok(());
        }
        let img = Arc::new(match sum.take() {
            Contribution::Spatial(vol) => vol,
            Contribution::Spectral(s) => net.fft.inverse(&s, self.g().shape(v), Pass::Forward),
        });
        *self.images[v].lock().expect("image lock") = Some(Arc::clone(&img));
        if self.g().node(v).role == NodeRole::Output {
            self.push(TaskKind::LossGradient(v), Task::Loss { node: v, round: r, actual: img });
        } else {
            for &e2 in self.g().out_edges(v) {
                self.push(TaskKind::Forward(e2), Task::Forward(FwdSub { edge: e2, round: r, input: Arc::clone(&img) }));
            }
        }
        Ok(())
    }

    fn loss(&self, w: usize, v: NodeId, r: usize, actual: &Volume<T>) -> Result<()> {
        self.record(w, TaskLabel::Loss(v, r));
        let idx = self.g().outputs().iter().position(|&o| o == v).expect("output node");
        let desired = self.desired.lock().expect("desired lock")[idx].take().expect("label for round");
        let (l, grad) = loss_and_gradient(actual, &desired)?;
        if !l.is_finite() {
            return Err(Error::Diverged { round: r, loss: l });
        }
        self.losses.lock().expect("loss lock")[r] += l;
        let grad = Arc::new(grad);
        for &e in self.g().in_edges(v) {
            self.push(TaskKind::Backward(e), Task::Backward { edge: e, round: r, grad: Arc::clone(&grad) });
        }
        Ok(())
    }

    fn backward(&self, w: usize, e: EdgeId, r: usize, grad: Arc<Volume<T>>) -> Result<()> {
        self.record(w, TaskLabel::Backward(e, r));
        let net = self.net;
        let g = self.g();
        let edge = g.edge(e);
        let (u, v) = (edge.from, edge.to);
        let x_u = self.images[u].lock().expect("image lock").clone().expect("forward image");
        let into_input = g.node(u).role == NodeRole::Input;
        // transforms into input nodes have no consumer
        let out = if into_input {
            None
        } else {
            Some(match edge.op {
                EdgeOp::Conv { .. } => {
                    let k = net.kernel(e);
                    match net.cfg.conv[e] {
                        ConvMode::Direct => Contribution::Spatial(conv_full_direct(&grad, &k.reflected())?),
                        ConvMode::Fft => {
                            let bx = g.shape(u);
                            let gs = net
                                .memo
                                .get_or_compute(self.key(r, MemoOwner::Node(v), MemoRole::BackwardImage, bx), || {
                                    net.fft.forward(&grad, bx, Pass::Backward, TransformKind::Gradient)
                                });
                            let role = if net.cfg.memoize { MemoRole::Kernel } else { MemoRole::BackwardKernel };
                            let ks = net.memo.get_or_compute(self.key(r, MemoOwner::Edge(e), role, bx), || {
                                kernel_spectrum(&k, bx, &net.fft, Pass::Backward)
                            });
                            let prod = transpose_product(&gs, &ks);
                            if net.bwd_spectral[u] {
                                Contribution::Spectral(prod)
                            } else {
                                Contribution::Spatial(net.fft.inverse(&prod, bx, Pass::Backward))
                            }
                        }
                    }
                }
                EdgeOp::Transfer { kind } => {
                    Contribution::Spatial(transfer_backward(&grad, &x_u, &TransferFn { kind, bias: net.bias(e) })?)
                }
                EdgeOp::MaxPool(p) => {
                    let rec = self.records[e].lock().expect("record lock");
                    Contribution::Spatial(maxpool_backward(&grad, rec.as_ref().expect("argmax record"), &p)?)
                }
                EdgeOp::MaxFilter(f) => {
                    let rec = self.records[e].lock().expect("record lock");
                    Contribution::Spatial(maxfilter_backward(
                        &grad,
                        rec.as_ref().expect("argmax record"),
                        &f,
                        g.shape(u),
                    )?)
                }
            })
        };
        if edge.op.is_trainable() {
            *self.payloads[e].lock().expect("payload lock") = Some(UpdatePayload { round: r, input: x_u, grad });
            let key = TaskKind::Update(e).priority(&net.priorities);
            self.cells[e].enqueue_with(|| self.queue.push(key, Task::Update(e)));
        }
        let Some(out) = out else {
            if self.input_bwd_left.fetch_sub(1, Ordering::AcqRel) == 1 {
                self.input_bwd_left.store(self.input_edges, Ordering::Release);
                if r + 1 < self.rounds {
                    self.push(TaskKind::DataProvider, Task::Data(r + 1));
                }
            }
            return Ok(());
        };
        let sum = self.bwd_sums[u].as_ref().expect("backward sum");
        if !sum.add_to_sum(out) {
            return Ok(());
        }
        let img = Arc::new(match sum.take() {
            Contribution::Spatial(vol) => vol,
            Contribution::Spectral(s) => net.fft.inverse(&s, g.shape(u), Pass::Backward),
        });
        for &e2 in g.in_edges(u) {
            self.push(TaskKind::Backward(e2), Task::Backward { edge: e2, round: r, grad: Arc::clone(&img) });
        }
        Ok(())
    }

    fn update(&self, w: usize, e: EdgeId) -> Result<()> {
        let p = self.payloads[e].lock().expect("payload lock").take().expect("update payload");
        self.record(w, TaskLabel::Update(e, p.round));
        let net = self.net;
        let g = self.g();
        let edge = g.edge(e);
        let eta = net.lr(e);
        match edge.op {
            EdgeOp::Conv { sparsity, .. } => {
                let k = net.kernel(e);
                let grad = match net.cfg.conv[e] {
                    ConvMode::Direct => kernel_gradient(&p.input, &p.grad, sparsity)?,
                    ConvMode::Fft => {
                        let bx = g.shape(edge.from);
                        let (img_role, grad_role) = if net.cfg.memoize {
                            (MemoRole::ForwardImage, MemoRole::BackwardImage)
                        } else {
                            (MemoRole::UpdateImage, MemoRole::UpdateGradient)
                        };
                        let xs = net
                            .memo
                            .get_or_compute(self.key(p.round, MemoOwner::Node(edge.from), img_role, bx), || {
                                net.fft.forward(&p.input, bx, Pass::Update, TransformKind::Image)
                            });
                        let gs =
                            net.memo.get_or_compute(self.key(p.round, MemoOwner::Node(edge.to), grad_role, bx), || {
                                net.fft.forward(&p.grad, bx, Pass::Update, TransformKind::Gradient)
                            });
                        gradient_from_spectra(&xs, &gs, k.dims(), sparsity, &net.fft, Pass::Update)
                    }
                };
                let mut weights = k.weights.clone();
                weights.sub_scaled(eta, &grad);
                drop(k);
                *net.params[e].lock().expect("param lock") = Slot::Kernel(Arc::new(Kernel { weights, sparsity }));
                net.memo.evict_owner(MemoOwner::Edge(e));
            }
            EdgeOp::Transfer { kind } => {
                let mut slot = net.params[e].lock().expect("param lock");
                let Slot::Bias(b) = &mut *slot else { unreachable!("transfer edge without bias") };
                let local = transfer_backward(&p.grad, &p.input, &TransferFn { kind, bias: *b })?;
                *b -= eta * bias_gradient(&local);
            }
            _ => unreachable!("update on an edge without parameters"),
        }
        self.updates_done[e].fetch_add(1, Ordering::Release);
        Ok(())
    }
}
