//! Dense layers and recurrent cells recorded on a [`Tape`].

use serde::{Deserialize, Serialize};

use super::params::{LayoutBuilder, ParamId, ParamTree};
use super::tape::{Tape, Var};
use crate::{Error, Result};

/// Fully connected network: affine layers with Tanh between them and a final
/// affine layer without activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Declares weights for `widths = [input, hidden.., output]`.
    pub fn register(builder: &mut LayoutBuilder, prefix: &str, widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = builder.add(format!("{prefix}.l{i}.w"), w[1], w[0]);
                let bias = builder.add(format!("{prefix}.l{i}.b"), w[1], 1);
                (weight, bias)
            })
            .collect();
        Self {
            widths: widths.to_vec(),
            layers,
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[self.widths.len() - 1]
    }

    pub fn last_layer(&self) -> (ParamId, ParamId) {
        self.layers[self.layers.len() - 1]
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(w, Some(b), h);
            if i < last {
                h = tape.tanh(h);
            }
        }
        h
    }

    /// Plain evaluation outside any tape.
    pub fn forward_values(&self, params: &ParamTree, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "MLP input has length {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let (w, b) = (params.get(w), params.get(b));
            let mut out = b.to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(h.len())) {
                *o += row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                if i < last {
                    *o = o.tanh();
                }
            }
            h = out;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::Rnn => "rnn",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        })
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::InvalidArgument(format!("unknown cell kind `{other}`"))),
        }
    }
}

/// Recurrent state on the tape; `c` is only present for LSTM cells.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

/// Elman, GRU or LSTM update with gate weights stacked row-wise.
///
/// Gate order: GRU `[update, reset, candidate]`, LSTM `[input, forget, cell, output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCell {
    kind: CellKind,
    input: usize,
    hidden: usize,
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
}

impl RecurrentCell {
    pub fn register(
        builder: &mut LayoutBuilder,
        prefix: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
    ) -> Self {
        let rows = kind.gates() * hidden;
        Self {
            kind,
            input,
            hidden,
            w_x: builder.add(format!("{prefix}.w_x"), rows, input),
            w_h: builder.add(format!("{prefix}.w_h"), rows, hidden),
            bias: builder.add(format!("{prefix}.b"), rows, 1),
        }
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input(&self) -> usize {
        self.input
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn zero_state(&self, tape: &mut Tape<'_>) -> CellState {
        let zeros = vec![0.0; self.hidden];
        let h = tape.constant(&zeros);
        let c = (self.kind == CellKind::Lstm).then(|| tape.constant(&zeros));
        CellState { h, c }
    }

    pub fn step(&self, tape: &mut Tape<'_>, state: CellState, x: Var) -> CellState {
        let n = self.hidden;
        let ax = tape.linear(self.w_x, Some(self.bias), x);
        let ah = tape.linear(self.w_h, None, state.h);
        match self.kind {
            CellKind::Rnn => {
                let pre = tape.add(ax, ah);
                CellState {
                    h: tape.tanh(pre),
                    c: None,
                }
            }
            CellKind::Gru => {
                let zx = tape.slice(ax, 0, 2 * n);
                let zh = tape.slice(ah, 0, 2 * n);
                let zr_pre = tape.add(zx, zh);
                let zr = tape.sigmoid(zr_pre);
                let z = tape.slice(zr, 0, n);
                let r = tape.slice(zr, n, n);
                let nx = tape.slice(ax, 2 * n, n);
                let nh = tape.slice(ah, 2 * n, n);
                let gated = tape.mul(r, nh);
                let cand_pre = tape.add(nx, gated);
                let cand = tape.tanh(cand_pre);
                // h' = (1 - z) * cand + z * h = cand + z * (h - cand)
                let diff = tape.sub(state.h, cand);
                let kept = tape.mul(z, diff);
                CellState {
                    h: tape.add(cand, kept),
                    c: None,
                }
            }
            CellKind::Lstm => {
                let c = state.c.expect("LSTM state without cell vector");
                let pre = tape.add(ax, ah);
                let sig_pre = tape.gather(pre, &lstm_sigmoid_rows(n));
                let gates = tape.sigmoid(sig_pre);
                let i = tape.slice(gates, 0, n);
                let f = tape.slice(gates, n, n);
                let o = tape.slice(gates, 2 * n, n);
                let g_pre = tape.slice(pre, 2 * n, n);
                let g = tape.tanh(g_pre);
                let fc = tape.mul(f, c);
                let ig = tape.mul(i, g);
                let c_new = tape.add(fc, ig);
                let tc = tape.tanh(c_new);
                CellState {
                    h: tape.mul(o, tc),
                    c: Some(c_new),
                }
            }
        }
    }
}

// rows of the input, forget and output gates in the stacked LSTM layout
fn lstm_sigmoid_rows(n: usize) -> Vec<usize> {
    (0..2 * n).chain(3 * n..4 * n).collect()
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} has length {got}, expected {want}"
        )))
    }
}

/// One Elman update `tanh(W_x x + W_h h + b)`.
pub fn rnn_cell(params: &ParamTree, cell: &RecurrentCell, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if cell.kind != CellKind::Rnn {
        return Err(Error::InvalidArgument(format!("expected an rnn cell, got {}", cell.kind)));
    }
    gated_step(params, cell, h, x)
}

/// One GRU update.
pub fn gru_cell(params: &ParamTree, cell: &RecurrentCell, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if cell.kind != CellKind::Gru {
        return Err(Error::InvalidArgument(format!("expected a gru cell, got {}", cell.kind)));
    }
    gated_step(params, cell, h, x)
}

fn gated_step(params: &ParamTree, cell: &RecurrentCell, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    check_len("hidden state", h.len(), cell.hidden)?;
    check_len("cell input", x.len(), cell.input)?;
    let mut tape = Tape::new(params);
    let hv = tape.constant(h);
    let xv = tape.constant(x);
    let next = cell.step(&mut tape, CellState { h: hv, c: None }, xv);
    Ok(tape.value(next.h).to_vec())
}

/// One LSTM update of `(h, c)`.
pub fn lstm_cell(
    params: &ParamTree,
    cell: &RecurrentCell,
    h: &[f64],
    c: &[f64],
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if cell.kind != CellKind::Lstm {
        return Err(Error::InvalidArgument(format!("expected an lstm cell, got {}", cell.kind)));
    }
    check_len("hidden state", h.len(), cell.hidden)?;
    check_len("cell state", c.len(), cell.hidden)?;
    check_len("cell input", x.len(), cell.input)?;
    let mut tape = Tape::new(params);
    let hv = tape.constant(h);
    let cv = tape.constant(c);
    let xv = tape.constant(x);
    let next = cell.step(&mut tape, CellState { h: hv, c: Some(cv) }, xv);
    let c_next = next.c.expect("lstm produces a cell state");
    Ok((tape.value(next.h).to_vec(), tape.value(c_next).to_vec()))
}
