use std::fmt;

/// Forward-pass floating-point operation counts by category.
///
/// Convolutions and linear layers count a multiply-add as 2; attention counts
/// `2·T²·d` for the scores and again for the weighted sum, per head; norms,
/// activations, resizes, softmax and residual adds cost 1 per output element.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopBreakdown {
    pub conv: u64,
    pub linear: u64,
    pub attention: u64,
    pub elementwise: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.conv + self.linear + self.attention + self.elementwise
    }

    /// Transformer share: linear projections, MLP and attention.
    pub fn transformer(&self) -> u64 {
        self.linear + self.attention
    }
}

impl fmt::Display for FlopBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let g = |v: u64| v as f64 / 1e9;
        write!(
            f,
            "conv {:.1} G, linear {:.1} G, attention {:.1} G, elementwise {:.1} G, total {:.1} G",
            g(self.conv),
            g(self.linear),
            g(self.attention),
            g(self.elementwise),
            g(self.total())
        )
    }
}

/// A labelled activation shape at one checkpoint of the forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub label: String,
    pub shape: Vec<usize>,
}

/// Optional shape log threaded through a forward pass.
#[derive(Debug, Default)]
pub struct Trace {
    enabled: bool,
    entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn on() -> Self {
        Self {
            enabled: true,
            entries: Vec::new(),
        }
    }

    pub fn note(&mut self, label: &str, shape: &[usize]) {
        if self.enabled {
            self.entries.push(TraceEntry {
                label: label.to_string(),
                shape: shape.to_vec(),
            });
        }
    }

    pub fn into_entries(self) -> Vec<TraceEntry> {
        self.entries
    }
}

/// Shape-only traversal: propagates extents and accumulates costs.
pub(crate) struct Walker {
    pub flops: FlopBreakdown,
    pub trace: Trace,
}

impl Walker {
    pub fn new() -> Self {
        Self {
            flops: FlopBreakdown::default(),
            trace: Trace::on(),
        }
    }

    /// `ops` element-wise passes over a tensor of `shape`.
    pub fn elementwise(&mut self, ops: u64, shape: &[usize]) {
        self.flops.elementwise += ops * shape.iter().product::<usize>() as u64;
    }
}

/// Weights plus optional bias of a `k×k` convolution.
pub fn conv_param_count(cin: usize, cout: usize, kernel: usize, bias: bool) -> usize {
    cout * cin * kernel * kernel + if bias { cout } else { 0 }
}

/// `2·k²·Cin·Cout` per output position per batch item.
pub fn conv_flops(cin: usize, cout: usize, kernel: usize, positions: usize, batch: usize) -> u64 {
    2 * (kernel * kernel) as u64 * (cin * cout) as u64 * positions as u64 * batch as u64
}
