use crate::netgraph::{EdgeId, NetGraph, NodeId, NodeRole, PriorityTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    DataProvider,
    Forward(EdgeId),
    Backward(EdgeId),
    Update(EdgeId),
    LossGradient(NodeId),
}

impl TaskKind {
    /// Queue key; smaller runs first. Data and loss tasks go ahead of
    /// everything, updates behind everything.
    pub fn priority(&self, pt: &PriorityTable) -> u64 {
        let edges = pt.fwd_rank.len() as u64;
        match *self {
            TaskKind::DataProvider | TaskKind::LossGradient(_) => 0,
            TaskKind::Forward(e) => 1 + pt.fwd_rank[e] as u64,
            TaskKind::Backward(e) => 1 + pt.bwd_rank[e] as u64,
            TaskKind::Update(_) => 1 + edges,
        }
    }
}

/// Static description of one iteration: every task with its priority key
/// and the tasks it waits for. `prev_round` holds the dependencies on the
/// previous iteration (a forward task waits for that edge's last update).
#[derive(Clone, Debug)]
pub struct TaskGraph {
    pub tasks: Vec<TaskKind>,
    pub priority: Vec<u64>,
    pub deps: Vec<Vec<usize>>,
    pub prev_round: Vec<Vec<usize>>,
}

impl TaskGraph {
    pub fn index_of(&self, t: TaskKind) -> Option<usize> {
        self.tasks.iter().position(|&x| x == t)
    }

    pub fn count(&self, pred: impl Fn(&TaskKind) -> bool) -> usize {
        self.tasks.iter().filter(|t| pred(t)).count()
    }
}

pub fn build_taskgraph(g: &NetGraph, pt: &PriorityTable) -> TaskGraph {
    let ne = g.edges().len();
    let mut tasks = vec![TaskKind::DataProvider];
    tasks.extend((0..ne).map(TaskKind::Forward));
    tasks.extend((0..ne).map(TaskKind::Backward));
    let updates: Vec<EdgeId> = g.trainable_edges();
    tasks.extend(updates.iter().map(|&e| TaskKind::Update(e)));
    tasks.extend(g.outputs().into_iter().map(TaskKind::LossGradient));

    let fwd = |e: EdgeId| 1 + e;
    let bwd = |e: EdgeId| 1 + ne + e;
    let upd = |e: EdgeId| 1 + 2 * ne + updates.iter().position(|&x| x == e).expect("trainable");
    let loss = |v: NodeId| 1 + 2 * ne + updates.len() + g.outputs().iter().position(|&x| x == v).expect("output");

    let mut deps = vec![Vec::new(); tasks.len()];
    let mut prev_round = vec![Vec::new(); tasks.len()];
    for (i, t) in tasks.iter().enumerate() {
        match *t {
            TaskKind::DataProvider => {}
            TaskKind::Forward(e) => {
                let u = g.edge(e).from;
                if g.node(u).role == NodeRole::Input {
                    deps[i].push(0);
                } else {
                    deps[i].extend(g.in_edges(u).iter().map(|&x| fwd(x)));
                }
                if g.edge(e).op.is_trainable() {
                    prev_round[i].push(upd(e));
                }
            }
            TaskKind::Backward(e) => {
                let v = g.edge(e).to;
                if g.node(v).role == NodeRole::Output {
                    deps[i].push(loss(v));
                } else {
                    deps[i].extend(g.out_edges(v).iter().map(|&x| bwd(x)));
                }
            }
            TaskKind::Update(e) => deps[i].extend([fwd(e), bwd(e)]),
            TaskKind::LossGradient(v) => deps[i].extend(g.in_edges(v).iter().map(|&x| fwd(x))),
        }
    }
    let priority = tasks.iter().map(|t| t.priority(pt)).collect();
    TaskGraph { tasks, priority, deps, prev_round }
}
