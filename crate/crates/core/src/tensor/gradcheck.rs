//! Central-difference gradient checking.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Lower bound on the denominator of [`relative_error`], so that gradients
/// that are zero up to rounding do not produce spurious failures.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for every entry of every parameter in `store`.
pub fn check_gradients<F>(store: &mut ParamStore, step: f64, f: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let grads = tape.backward(loss)?;
    let mut analytic: Vec<Tensor> = store
        .ids()
        .map(|id| Tensor::zeros(store.value(id).rows(), store.value(id).cols()))
        .collect();
    for (id, g) in grads.iter() {
        analytic[id.index()].add_assign(g);
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(&mut tape, store)?;
        let x = tape.value(v).item();
        if !x.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(x)
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + step;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - step;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[id.index()].data()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((store.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}

/// Operations covered by [`check_op`]. `reuse` feeds one value into two
/// branches to exercise gradient accumulation.
pub const OP_NAMES: &[&str] = &[
    "matmul",
    "add",
    "add_bias",
    "sub",
    "mul",
    "scale",
    "concat_rows",
    "concat_cols",
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu",
    "square",
    "sqrt",
    "softmax_rows",
    "softmax_cols",
    "log_softmax_rows",
    "segment_sum",
    "segment_softmax",
    "gather_rows",
    "slice_cols",
    "row_scale",
    "row_sum",
    "sum",
    "mean",
    "pick",
    "dense",
    "lstm_cell",
    "reuse",
];

// Entries bounded away from zero so kinks in relu and leaky relu stay out
// of reach of the finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(0.5..2.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Gradient check of one primitive on small random inputs.
///
/// The output is contracted with a fixed random weight tensor before summing
/// so that, for example, softmax does not reduce to a constant.
pub fn check_op(name: &str, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let r = &mut rng;
    let a = |s: &mut ParamStore, r: &mut ChaCha8Rng, n: &str, rows, cols| s.add(n, away_from_zero(r, rows, cols));
    let seg: super::Index = Rc::from(&[0usize, 2, 0, 1, 2][..]);
    let idx: super::Index = Rc::from(&[3usize, 0, 3, 1][..]);
    let cols: super::Index = Rc::from(&[2usize, 0, 1, 2][..]);

    let params: Vec<ParamId> = match name {
        "matmul" => vec![a(&mut store, r, "a", 3, 4), a(&mut store, r, "b", 4, 2)],
        "add" | "sub" | "mul" => vec![a(&mut store, r, "a", 3, 2), a(&mut store, r, "b", 3, 2)],
        "add_bias" => vec![a(&mut store, r, "a", 3, 4), a(&mut store, r, "b", 1, 4)],
        "concat_rows" => vec![a(&mut store, r, "a", 2, 3), a(&mut store, r, "b", 1, 3)],
        "concat_cols" => vec![a(&mut store, r, "a", 2, 3), a(&mut store, r, "b", 2, 1)],
        "sqrt" => vec![store.add("a", positive(r, 3, 2))],
        "segment_sum" => vec![a(&mut store, r, "a", 5, 2)],
        "segment_softmax" => vec![a(&mut store, r, "a", 5, 1)],
        "gather_rows" | "pick" => vec![a(&mut store, r, "a", 4, 3)],
        "row_scale" => vec![a(&mut store, r, "a", 3, 2), a(&mut store, r, "s", 3, 1)],
        "dense" => vec![
            a(&mut store, r, "x", 3, 4),
            a(&mut store, r, "w", 4, 2),
            a(&mut store, r, "b", 1, 2),
        ],
        "lstm_cell" => vec![
            a(&mut store, r, "x", 2, 3),
            a(&mut store, r, "h", 2, 2),
            a(&mut store, r, "c", 2, 2),
            a(&mut store, r, "w_ih", 3, 8),
            a(&mut store, r, "w_hh", 2, 8),
            a(&mut store, r, "b", 1, 8),
        ],
        "reuse" => vec![a(&mut store, r, "a", 2, 2), a(&mut store, r, "w", 2, 2)],
        n if OP_NAMES.contains(&n) => vec![a(&mut store, r, "a", 3, 4)],
        other => {
            return Err(Error::InvalidArgument {
                op: "gradcheck",
                msg: format!("unknown op `{other}`; expected one of {}", OP_NAMES.join(", ")),
            })
        }
    };
    let weight_seed: u64 = rng.gen();
    let name = name.to_string();

    let f = move |t: &mut Tape, s: &ParamStore| -> Result<Var> {
        let v: Vec<Var> = params.iter().map(|&id| t.param(s, id)).collect();
        let out = match name.as_str() {
            "matmul" => t.matmul(v[0], v[1])?,
            "add" => t.add(v[0], v[1])?,
            "add_bias" => t.add_bias(v[0], v[1])?,
            "sub" => t.sub(v[0], v[1])?,
            "mul" => t.mul(v[0], v[1])?,
            "scale" => t.scale(v[0], -1.7),
            "concat_rows" => t.concat(&[v[0], v[1]], 0)?,
            "concat_cols" => t.concat(&[v[0], v[1]], 1)?,
            "sigmoid" => t.sigmoid(v[0]),
            "tanh" => t.tanh(v[0]),
            "relu" => t.relu(v[0]),
            "leaky_relu" => t.leaky_relu(v[0], 0.2),
            "square" => t.square(v[0]),
            "sqrt" => t.sqrt(v[0])?,
            "softmax_rows" => t.softmax(v[0], 0)?,
            "softmax_cols" => t.softmax(v[0], 1)?,
            "log_softmax_rows" => t.log_softmax_rows(v[0]),
            "segment_sum" => t.segment_sum(v[0], &seg, 4)?,
            "segment_softmax" => t.segment_softmax(v[0], &seg, 3)?,
            "gather_rows" => t.gather_rows(v[0], &idx)?,
            "slice_cols" => t.slice_cols(v[0], 1, 3)?,
            "row_scale" => t.row_scale(v[0], v[1])?,
            "row_sum" => t.row_sum(v[0]),
            "sum" => t.sum(v[0]),
            "mean" => t.mean(v[0])?,
            "pick" => t.pick(v[0], &cols)?,
            "dense" => t.dense(v[0], v[1], v[2])?,
            "lstm_cell" => {
                let (h, c) = t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])?;
                t.concat(&[h, c], 1)?
            }
            "reuse" => {
                let left = t.matmul(v[0], v[1])?;
                let right = t.tanh(v[0]);
                let both = t.mul(left, right)?;
                t.add(both, v[0])?
            }
            _ => unreachable!(),
        };
        let [rows, cols] = t.shape(out);
        let mut wr = ChaCha8Rng::seed_from_u64(weight_seed);
        let w = t.constant(away_from_zero(&mut wr, rows, cols));
        let weighted = t.mul(out, w)?;
        Ok(t.sum(weighted))
    };
    check_gradients(&mut store, DEFAULT_STEP, f)
}
