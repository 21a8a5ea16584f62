use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor_ops::{Dim3, FilterSpec, PoolSpec, TransferKind};

use super::{Edge, EdgeOp, NetGraph, Node, NodeRole};

/// Fully connected layered net. Each letter of `seq` is one layer:
/// `C` convolution (every node to every node), `T` transfer, `M` max-filter
/// of size `pool` (dilated by the current sparsity, which then grows by
/// `pool` for everything downstream), `P` max-pooling by `pool`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredSpec {
    pub seq: String,
    pub width: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: Dim3,
    pub pool: Dim3,
    pub transfer: TransferKind,
    pub output: Dim3,
    pub lr: Option<f64>,
}

impl Default for LayeredSpec {
    fn default() -> Self {
        LayeredSpec {
            seq: "CTMCTMCTCT".into(),
            width: 8,
            inputs: 1,
            outputs: 1,
            kernel: [3, 3, 3],
            pool: [2, 2, 2],
            transfer: TransferKind::RectifiedLinear,
            output: [12, 12, 12],
            lr: None,
        }
    }
}

pub fn layered(spec: &LayeredSpec) -> Result<NetGraph> {
    let seq: Vec<char> = spec.seq.chars().filter(|c| !c.is_whitespace()).collect();
    if seq.is_empty() {
        return Err(Error::Config("layered net needs a non-empty sequence".into()));
    }
    if spec.width == 0 || spec.inputs == 0 || spec.outputs == 0 {
        return Err(Error::Config("layer widths must be positive".into()));
    }
    let last_conv = seq.iter().rposition(|&c| c == 'C');
    let mut nodes: Vec<Node> =
        (0..spec.inputs).map(|i| Node { name: format!("l0_{i}"), role: NodeRole::Input }).collect();
    let mut edges = Vec::new();
    let mut prev: Vec<usize> = (0..spec.inputs).collect();
    let mut sparsity = [1, 1, 1];
    for (li, &c) in seq.iter().enumerate() {
        let layer = li + 1;
        let width = match c {
            'C' if Some(li) == last_conv => spec.outputs,
            'C' => spec.width,
            'T' | 'M' | 'P' => prev.len(),
            other => return Err(Error::Config(format!("unknown layer letter `{other}` in `{}`", spec.seq))),
        };
        let start = nodes.len();
        let cur: Vec<usize> = (start..start + width).collect();
        for i in 0..width {
            nodes.push(Node { name: format!("l{layer}_{i}"), role: NodeRole::Internal });
        }
        let mut link = |from: usize, to: usize, j: usize, i: usize, op: EdgeOp| {
            edges.push(Edge { name: format!("l{layer}_{j}_{i}"), from, to, op, lr: spec.lr });
        };
        match c {
            'C' => {
                let op = EdgeOp::Conv { kernel: spec.kernel, sparsity };
                for (j, &u) in prev.iter().enumerate() {
                    for (i, &v) in cur.iter().enumerate() {
                        link(u, v, j, i, op);
                    }
                }
            }
            _ => {
                let op = match c {
                    'T' => EdgeOp::Transfer { kind: spec.transfer },
                    'M' => EdgeOp::MaxFilter(FilterSpec { k: spec.pool, s: sparsity }),
                    _ => EdgeOp::MaxPool(PoolSpec { p: spec.pool }),
                };
                for (i, (&u, &v)) in prev.iter().zip(&cur).enumerate() {
                    link(u, v, i, i, op);
                }
                if c == 'M' {
                    sparsity = [0, 1, 2].map(|a| sparsity[a] * spec.pool[a]);
                }
            }
        }
        prev = cur;
    }
    for &v in &prev {
        nodes[v].role = NodeRole::Output;
    }
    NetGraph::new(nodes, edges, spec.output)
}

#[derive(Default)]
struct Section {
    kind: String,
    id: String,
    line: usize,
    keys: Vec<(String, String, usize)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        let i = self.keys.iter().position(|(k, _, _)| k == key)?;
        let (_, v, l) = self.keys.remove(i);
        Some((v, l))
    }

    fn require(&mut self, key: &str) -> Result<(String, usize)> {
        self.take(key).ok_or_else(|| Error::Parse {
            line: self.line,
            msg: format!("[{} {}] is missing `{key}=`", self.kind, self.id),
        })
    }

    fn finish(self) -> Result<()> {
        match self.keys.first() {
            Some((k, _, l)) => Err(Error::Parse { line: *l, msg: format!("unknown key `{k}` in [{}]", self.kind) }),
            None => Ok(()),
        }
    }
}

fn dims(v: &str, line: usize) -> Result<Dim3> {
    let parts: Vec<usize> = v
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse { line, msg: format!("bad extent list `{v}`") })?;
    let d = match parts[..] {
        [a] => [a, a, a],
        [a, b, c] => [a, b, c],
        _ => return Err(Error::Parse { line, msg: format!("expected 1 or 3 extents, got `{v}`") }),
    };
    if d.contains(&0) {
        return Err(Error::Parse { line, msg: format!("extents must be positive: `{v}`") });
    }
    Ok(d)
}

fn number<F: std::str::FromStr>(v: &str, line: usize) -> Result<F> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("bad number `{v}`") })
}

fn sections(text: &str) -> Result<Vec<Section>> {
    let mut out: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut rest = raw.split('#').next().unwrap_or("").trim();
        if rest.is_empty() {
            continue;
        }
        if let Some(body) = rest.strip_prefix('[') {
            let close = body.find(']').ok_or(Error::Parse { line, msg: "unclosed `[`".into() })?;
            let mut head = body[..close].split_whitespace();
            let kind = head.next().unwrap_or("").to_string();
            let id = head.next().unwrap_or("").to_string();
            if head.next().is_some() {
                return Err(Error::Parse { line, msg: "section header has extra words".into() });
            }
            out.push(Section { kind, id, line, keys: Vec::new() });
            rest = body[close + 1..].trim();
        }
        let sec = out.last_mut().ok_or(Error::Parse { line, msg: "key outside of a section".into() })?;
        for tok in rest.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse { line, msg: format!("expected key=value, got `{tok}`") })?;
            sec.keys.push((k.to_string(), v.to_string(), line));
        }
    }
    Ok(out)
}

/// Parses the text net description (explicit `[node]`/`[edge]` sections
/// anchored by `[net] output=` or `input=`, or a single `[layered]` section).
pub fn parse_netspec(text: &str) -> Result<NetGraph> {
    let secs = sections(text)?;
    if let Some(pos) = secs.iter().position(|s| s.kind == "layered") {
        if secs.len() != 1 {
            return Err(Error::Parse { line: secs[pos].line, msg: "[layered] must be the only section".into() });
        }
        return layered(&parse_layered(secs.into_iter().next().expect("one section"))?);
    }

    let mut nodes: Vec<(Node, Option<NodeRole>)> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut anchor: Option<(bool, Dim3)> = None;
    let mut pending_edges = Vec::new();
    for mut s in secs {
        match s.kind.as_str() {
            "node" => {
                if s.id.is_empty() || ids.contains_key(&s.id) {
                    return Err(Error::Parse { line: s.line, msg: format!("missing or duplicate node id `{}`", s.id) });
                }
                let role = match s.take("role") {
                    None => None,
                    Some((r, l)) => Some(match r.as_str() {
                        "input" => NodeRole::Input,
                        "internal" => NodeRole::Internal,
                        "output" => NodeRole::Output,
                        _ => return Err(Error::Parse { line: l, msg: format!("unknown role `{r}`") }),
                    }),
                };
                ids.insert(s.id.clone(), nodes.len());
                nodes.push((Node { name: s.id.clone(), role: NodeRole::Internal }, role));
                s.finish()?;
            }
            "edge" => pending_edges.push(s),
            "net" => {
                let out = s.take("output");
                let inp = s.take("input");
                anchor = match (out, inp) {
                    (Some((v, l)), None) => Some((true, dims(&v, l)?)),
                    (None, Some((v, l))) => Some((false, dims(&v, l)?)),
                    _ => {
                        return Err(Error::Parse {
                            line: s.line,
                            msg: "[net] needs exactly one of output= or input=".into(),
                        })
                    }
                };
                s.finish()?;
            }
            other => return Err(Error::Parse { line: s.line, msg: format!("unknown section `{other}`") }),
        }
    }
    for mut s in pending_edges {
        let line = s.line;
        let endpoint = |key: &str, s: &mut Section| -> Result<usize> {
            let (v, l) = s.require(key)?;
            ids.get(&v).copied().ok_or(Error::Parse { line: l, msg: format!("unknown node `{v}`") })
        };
        let from = endpoint("from", &mut s)?;
        let to = endpoint("to", &mut s)?;
        let (ty, tl) = s.require("type")?;
        let sparsity = match s.take("sparsity") {
            Some((v, l)) => dims(&v, l)?,
            None => [1, 1, 1],
        };
        let op = match ty.as_str() {
            "conv" => {
                let (k, l) = s.require("kernel")?;
                EdgeOp::Conv { kernel: dims(&k, l)?, sparsity }
            }
            "transfer" => {
                let (f, l) = s.require("fn")?;
                let kind = f.parse().map_err(|e: Error| Error::Parse { line: l, msg: e.to_string() })?;
                EdgeOp::Transfer { kind }
            }
            "pool" => {
                let (p, l) = s.require("p")?;
                EdgeOp::MaxPool(PoolSpec { p: dims(&p, l)? })
            }
            "filter" => {
                let (k, l) = s.require("k")?;
                EdgeOp::MaxFilter(FilterSpec { k: dims(&k, l)?, s: sparsity })
            }
            _ => return Err(Error::Parse { line: tl, msg: format!("unknown edge type `{ty}`") }),
        };
        if sparsity != [1, 1, 1] && !matches!(op, EdgeOp::Conv { .. } | EdgeOp::MaxFilter(_)) {
            return Err(Error::Parse { line, msg: format!("sparsity is not valid for {ty} edges") });
        }
        let lr = match s.take("lr") {
            Some((v, l)) => Some(number::<f64>(&v, l)?),
            None => None,
        };
        edges.push(Edge { name: s.id.clone(), from, to, op, lr });
        s.finish()?;
    }
    let mut indeg = vec![0; nodes.len()];
    let mut outdeg = vec![0; nodes.len()];
    for e in &edges {
        outdeg[e.from] += 1;
        indeg[e.to] += 1;
    }
    let nodes: Vec<Node> = nodes
        .into_iter()
        .enumerate()
        .map(|(i, (mut n, role))| {
            n.role = role.unwrap_or(if indeg[i] == 0 {
                NodeRole::Input
            } else if outdeg[i] == 0 {
                NodeRole::Output
            } else {
                NodeRole::Internal
            });
            n
        })
        .collect();
    match anchor {
        Some((true, d)) => NetGraph::new(nodes, edges, d),
        Some((false, d)) => NetGraph::from_input_shape(nodes, edges, d),
        None => Err(Error::Parse { line: 0, msg: "missing [net] section with output= or input=".into() }),
    }
}

/// The layered description in `text`, if it is written as a `[layered]` section.
pub fn parse_layered_spec(text: &str) -> Result<Option<LayeredSpec>> {
    let secs = sections(text)?;
    match secs.iter().position(|s| s.kind == "layered") {
        None => Ok(None),
        Some(pos) if secs.len() != 1 => {
            Err(Error::Parse { line: secs[pos].line, msg: "[layered] must be the only section".into() })
        }
        Some(_) => parse_layered(secs.into_iter().next().expect("one section")).map(Some),
    }
}

fn parse_layered(mut s: Section) -> Result<LayeredSpec> {
    let mut spec = LayeredSpec::default();
    spec.seq = s.require("seq")?.0;
    let (o, l) = s.require("output")?;
    spec.output = dims(&o, l)?;
    if let Some((v, l)) = s.take("width") {
        spec.width = number(&v, l)?;
    }
    if let Some((v, l)) = s.take("inputs") {
        spec.inputs = number(&v, l)?;
    }
    if let Some((v, l)) = s.take("outputs") {
        spec.outputs = number(&v, l)?;
    }
    if let Some((v, l)) = s.take("kernel") {
        spec.kernel = dims(&v, l)?;
    }
    if let Some((v, l)) = s.take("pool") {
        spec.pool = dims(&v, l)?;
    }
    if let Some((v, l)) = s.take("fn") {
        spec.transfer = v.parse().map_err(|e: Error| Error::Parse { line: l, msg: e.to_string() })?;
    }
    if let Some((v, l)) = s.take("lr") {
        spec.lr = Some(number(&v, l)?);
    }
    s.finish()?;
    Ok(spec)
}

/// Layered spec text for `spec`, the inverse of the `[layered]` parser.
impl std::fmt::Display for LayeredSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = |d: Dim3| format!("{},{},{}", d[0], d[1], d[2]);
        write!(
            f,
            "[layered] seq={} width={} inputs={} outputs={} kernel={} pool={} fn={} output={}",
            self.seq,
            self.width,
            self.inputs,
            self.outputs,
            d(self.kernel),
            d(self.pool),
            self.transfer,
            d(self.output)
        )?;
        if let Some(lr) = self.lr {
            write!(f, " lr={lr}")?;
        }
        Ok(())
    }
}
