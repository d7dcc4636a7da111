//! Reverse-mode automatic differentiation on a Wengert tape of scalars.
//!
//! The tape is thread-local: [`record`] activates it, runs a closure over
//! leaf [`Var`]s, then back-propagates from the scalar output. Local partial
//! derivatives are stored at record time, so the backward sweep is a single
//! reverse pass over the node list. Constants never touch the tape; they are
//! encoded with a sentinel parent index and skipped during accumulation.

use crate::real::{norm_cdf_f64, norm_pdf_f64, Real};
use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parent: [u32; 2],
    partial: [f64; 2],
}

struct TapeData {
    nodes: Vec<Node>,
    active: bool,
}

thread_local! {
    static TAPE: RefCell<TapeData> = RefCell::new(TapeData {
        nodes: Vec::new(),
        active: false,
    });
}

/// Differentiable scalar. Plain value plus the index of its tape node;
/// constants carry the sentinel index and are never recorded.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

impl Var {
    fn constant(val: f64) -> Self {
        Var { idx: NONE, val }
    }

    fn unary(self, val: f64, partial: f64) -> Var {
        if self.idx == NONE {
            return Var::constant(val);
        }
        let idx = push(Node {
            parent: [self.idx, NONE],
            partial: [partial, 0.0],
        });
        Var { idx, val }
    }

    fn binary(self, rhs: Var, val: f64, d_lhs: f64, d_rhs: f64) -> Var {
        if self.idx == NONE && rhs.idx == NONE {
            return Var::constant(val);
        }
        let idx = push(Node {
            parent: [self.idx, rhs.idx],
            partial: [d_lhs, d_rhs],
        });
        Var { idx, val }
    }
}

fn push(node: Node) -> u32 {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        debug_assert!(t.active, "tape arithmetic outside record()");
        let idx = t.nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        t.nodes.push(node);
        idx as u32
    })
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.val == other.val
    }
}

impl PartialOrd for Var {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.val.partial_cmp(&other.val)
    }
}

impl Add for Var {
    type Output = Var;
    fn add(self, rhs: Var) -> Var {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    fn sub(self, rhs: Var) -> Var {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    fn mul(self, rhs: Var) -> Var {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    fn div(self, rhs: Var) -> Var {
        let inv = 1.0 / rhs.val;
        self.binary(rhs, self.val * inv, inv, -self.val * inv * inv)
    }
}

impl Neg for Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

impl Real for Var {
    fn from_f64(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(self) -> f64 {
        self.val
    }
    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        self.unary(r, 0.5 / r)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn norm_cdf(self) -> Self {
        self.unary(norm_cdf_f64(self.val), norm_pdf_f64(self.val))
    }
}

struct ActiveGuard;

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        TAPE.with(|t| {
            let mut t = t.borrow_mut();
            t.active = false;
            t.nodes.clear();
        });
    }
}

/// Records `f` over leaves seeded from `inputs` and returns the output value
/// together with the gradient with respect to every input.
///
/// Recording is not reentrant; nested calls on one thread panic.
pub fn record<F, E>(inputs: &[f64], f: F) -> Result<(f64, Vec<f64>), E>
where
    F: FnOnce(&[Var]) -> Result<Var, E>,
{
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        assert!(!t.active, "nested tape recording is not supported");
        t.active = true;
        t.nodes.clear();
    });
    let _guard = ActiveGuard;

    let leaves: Vec<Var> = inputs
        .iter()
        .map(|&v| {
            let idx = push(Node {
                parent: [NONE, NONE],
                partial: [0.0, 0.0],
            });
            Var { idx, val: v }
        })
        .collect();

    let out = f(&leaves)?;

    let grad = TAPE.with(|t| {
        let t = t.borrow();
        let mut adjoint = vec![0.0f64; t.nodes.len()];
        if out.idx != NONE {
            adjoint[out.idx as usize] = 1.0;
            for i in (0..t.nodes.len()).rev() {
                let a = adjoint[i];
                if a == 0.0 {
                    continue;
                }
                let node = &t.nodes[i];
                for k in 0..2 {
                    let p = node.parent[k];
                    if p != NONE {
                        adjoint[p as usize] += a * node.partial[k];
                    }
                }
            }
        }
        leaves.iter().map(|l| adjoint[l.idx as usize]).collect()
    });

    Ok((out.val, grad))
}
