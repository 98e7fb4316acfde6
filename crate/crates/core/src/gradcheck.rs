//! Central finite-difference checks of the tape gradients, per operation and
//! for the whole encoder-decoder loss.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::eval::NumberMap;
use crate::graph::{build_dependency_graph, DependencyArc, DependencyParse, GraphType};
use crate::model::Graph2Tree;
use crate::params::{Initializer, ParamStore};
use crate::tensor::{Linear, LstmCell, Result, Tape, Tensor, Var};
use crate::train::TrainConfig;
use crate::tree::parse_to_tree;
use crate::vocab::build_vocabs;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error for the per-op checks.
pub const OP_FLOOR: f64 = 1e-6;
/// Floor for the full model, whose loss is O(1) and sums hundreds of terms.
pub const MODEL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Scalars perturbed.
    pub checked: usize,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn rand_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Checks `sum(f(x) * w)` for fixed random `w` against central differences
/// in every input entry. Returns the worst relative error and the number of
/// entries checked.
pub fn check_fn(inputs: &[Tensor], seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<(f64, usize)> {
    let run = |xs: &[Tensor], w: Option<&Tensor>, backward: bool| -> Result<(f64, Tensor, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&mut tape, &vars)?;
        let w = match w {
            Some(w) => w.clone(),
            None => rand_tensor(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), tape.shape(out)),
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv)?;
        let loss = tape.sum(prod);
        let mut grads = Vec::new();
        if backward {
            tape.backward(loss)?;
            grads = vars.iter().map(|v| tape.grad(*v).expect("leaf requires grad")).collect();
        }
        Ok((tape.value(loss).item(), w, grads))
    };
    let (_, w, analytic) = run(inputs, None, true)?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for j in 0..xs[k].len() {
            let orig = xs[k].data()[j];
            xs[k].data_mut()[j] = orig + EPS;
            let plus = run(&xs, Some(&w), false)?.0;
            xs[k].data_mut()[j] = orig - EPS;
            let minus = run(&xs, Some(&w), false)?.0;
            xs[k].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * EPS);
            worst = worst.max(relative_error(analytic[k].data()[j], numeric, OP_FLOOR));
            checked += 1;
        }
    }
    Ok((worst, checked))
}

type OpFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// Every differentiable operation, including the LSTM cell and linear layer
/// composites, on random inputs drawn from `seed`.
pub fn op_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape);
    let adj = Rc::new(vec![vec![1, 2], vec![], vec![0, 1, 3], vec![2]]);

    let mut store = ParamStore::new();
    let mut init = Initializer::new(seed, 0.5);
    let cell = LstmCell::register(&mut store, &mut init, "cell", 3, 2);
    let lin = Linear::register(&mut store, &mut init, "lin", 3, 2, true);
    let store = Rc::new(store);

    let cases: Vec<(&str, Vec<Tensor>, OpFn)> = vec![
        ("matmul", vec![r(&[3, 4]), r(&[4, 2])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matmul_vec", vec![r(&[4]), r(&[4, 3])], Box::new(|t, v| t.matmul(v[0], v[1]))),
        ("matvec", vec![r(&[3, 4]), r(&[4])], Box::new(|t, v| t.matvec(v[0], v[1]))),
        ("add", vec![r(&[5]), r(&[5])], Box::new(|t, v| t.add(v[0], v[1]))),
        ("sub", vec![r(&[5]), r(&[5])], Box::new(|t, v| t.sub(v[0], v[1]))),
        ("mul", vec![r(&[2, 3]), r(&[2, 3])], Box::new(|t, v| t.mul(v[0], v[1]))),
        ("mul_self", vec![r(&[4])], Box::new(|t, v| t.mul(v[0], v[0]))),
        ("add_bias_vec", vec![r(&[4]), r(&[4])], Box::new(|t, v| t.add_bias(v[0], v[1]))),
        ("add_bias_rows", vec![r(&[3, 4]), r(&[4])], Box::new(|t, v| t.add_bias(v[0], v[1]))),
        ("scale", vec![r(&[4])], Box::new(|t, v| Ok(t.scale(v[0], -2.5)))),
        ("sigmoid", vec![r(&[6])], Box::new(|t, v| Ok(t.sigmoid(v[0])))),
        ("tanh", vec![r(&[6])], Box::new(|t, v| Ok(t.tanh(v[0])))),
        ("relu", vec![r(&[6])], Box::new(|t, v| Ok(t.relu(v[0])))),
        ("softmax", vec![r(&[5])], Box::new(|t, v| t.softmax(v[0]))),
        ("concat_vec", vec![r(&[2]), r(&[3])], Box::new(|t, v| t.concat(&[v[0], v[1]], 0))),
        ("concat_rows", vec![r(&[2, 2]), r(&[3, 2])], Box::new(|t, v| t.concat(&[v[0], v[1]], 0))),
        ("concat_cols", vec![r(&[2, 2]), r(&[2, 3])], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
        ("max_pool_rows", vec![r(&[4, 3])], Box::new(|t, v| t.max_pool_rows(v[0]))),
        ("index_rows", vec![r(&[4, 3])], Box::new(|t, v| t.index_rows(v[0], &[2, 0, 2]))),
        ("row", vec![r(&[4, 3])], Box::new(|t, v| t.row(v[0], 1))),
        ("stack", vec![r(&[3]), r(&[3])], Box::new(|t, v| t.stack(&[v[1], v[0], v[1]]))),
        ("slice", vec![r(&[6])], Box::new(|t, v| t.slice(v[0], 2, 3))),
        (
            "neighbor_mean",
            vec![r(&[4, 2])],
            Box::new(move |t, v| t.neighbor_mean(v[0], adj.clone())),
        ),
        (
            "dropout",
            vec![r(&[8])],
            // a fresh rng per evaluation keeps the mask fixed
            Box::new(|t, v| Ok(t.dropout(v[0], 0.4, &mut ChaCha8Rng::seed_from_u64(3)))),
        ),
        ("cross_entropy", vec![r(&[5])], Box::new(|t, v| t.cross_entropy(v[0], 3))),
        ("sum", vec![r(&[2, 2])], Box::new(|t, v| Ok(t.sum(v[0])))),
        ("add_n", vec![r(&[3]), r(&[3])], Box::new(|t, v| t.add_n(&[v[0], v[1], v[0]]))),
        (
            "lstm_cell",
            vec![r(&[3]), r(&[2]), r(&[2])],
            Box::new({
                let store = store.clone();
                move |t, v| {
                    let consts = [cell.w_x, cell.w_h, cell.b].map(|id| t.constant(store.get(id).clone()));
                    lstm_inline(t, v, consts, 2)
                }
            }),
        ),
        (
            "linear",
            vec![r(&[4, 3])],
            Box::new({
                let store = store.clone();
                move |t, v| {
                    let w = t.constant(store.get(lin.w).clone());
                    let b = t.constant(store.get(lin.b.expect("bias registered")).clone());
                    let y = t.matmul(v[0], w)?;
                    t.add_bias(y, b)
                }
            }),
        ),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (name, inputs, f))| {
            let (max_rel_error, checked) = check_fn(&inputs, seed.wrapping_add(i as u64), f)?;
            Ok(GradReport {
                name: name.to_string(),
                max_rel_error,
                checked,
            })
        })
        .collect()
}

/// LSTM gate arithmetic with input, hidden and cell state as leaves;
/// returns `[h; c]`.
fn lstm_inline(t: &mut Tape, v: &[Var], [w_x, w_h, b]: [Var; 3], hidden: usize) -> Result<Var> {
    let xw = t.matmul(v[0], w_x)?;
    let hw = t.matmul(v[1], w_h)?;
    let pre = t.add(xw, hw)?;
    let gates = t.add(pre, b)?;
    let i = t.slice(gates, 0, hidden)?;
    let f = t.slice(gates, hidden, hidden)?;
    let g = t.slice(gates, 2 * hidden, hidden)?;
    let o = t.slice(gates, 3 * hidden, hidden)?;
    let (i, f, g, o) = (t.sigmoid(i), t.sigmoid(f), t.tanh(g), t.sigmoid(o));
    let keep = t.mul(f, v[2])?;
    let write = t.mul(i, g)?;
    let c = t.add(keep, write)?;
    let tc = t.tanh(c);
    let h = t.mul(o, tc)?;
    t.concat(&[h, c], 0)
}

/// A 5-node dependency graph (3 words, 2 relations) paired with a 3-node
/// target tree.
pub fn model_fixture() -> Example {
    let tokens: Vec<String> = ["add", "n1", "n2"].map(String::from).to_vec();
    let parse = DependencyParse::new(tokens.clone(), vec![DependencyArc::new(0, "obj", 1), DependencyArc::new(0, "obl", 2)], 0);
    let graph = build_dependency_graph(&tokens, &parse).expect("fixture graph");
    let tree = parse_to_tree("x = ( n1 + ( n2 * n1 ) )").expect("fixture tree");
    Example {
        id: "gradcheck".into(),
        tokens,
        numbers: NumberMap::new(),
        graph,
        tree,
        answer: None,
    }
}

/// Perturbs every model parameter and compares the tape gradient of the
/// teacher-forced loss with central differences.
pub fn model_check(seed: u64) -> Result<GradReport> {
    let ex = model_fixture();
    let config = TrainConfig {
        embed_dim: 4,
        hidden_dim: 3,
        decoder_embed_dim: 3,
        decoder_hidden_dim: 4,
        dropout: 0.0,
        init_scale: 0.5,
        graph_type: GraphType::Dependency,
        seed,
        ..Default::default()
    };
    let vocabs = build_vocabs(std::slice::from_ref(&ex)).expect("non-empty");
    let mut model = Graph2Tree::new(config, vocabs).expect("valid config");
    let mut analytic = model.zero_grads();
    model.accumulate_grads(&ex, None, &mut analytic)?;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for j in 0..model.params.get(id).len() {
            let orig = model.params.get(id).data()[j];
            model.params.get_mut(id).data_mut()[j] = orig + EPS;
            let plus = model.loss(&ex)?;
            model.params.get_mut(id).data_mut()[j] = orig - EPS;
            let minus = model.loss(&ex)?;
            model.params.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * EPS);
            worst = worst.max(relative_error(analytic[id.index()][j], numeric, MODEL_FLOOR));
            checked += 1;
        }
    }
    Ok(GradReport {
        name: "graph2tree_loss".into(),
        max_rel_error: worst,
        checked,
    })
}

/// The op suite followed by the full-model check.
pub fn run_all(seed: u64) -> Result<Vec<GradReport>> {
    let mut reports = op_suite(seed)?;
    reports.push(model_check(seed)?);
    Ok(reports)
}
