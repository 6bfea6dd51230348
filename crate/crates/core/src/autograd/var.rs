use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::tensor::{Real, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` without recording any operations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(prev);
    f()
}

/// `(inputs, output, upstream_grad) -> per-input gradient`.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[Var<T>], &Var<T>, &Var<T>) -> Vec<Option<Var<T>>>>;

struct GradFn<T: Real> {
    inputs: Vec<Var<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Real> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// A tensor-valued node of the tape.
pub struct Var<T: Real>(Rc<Node<T>>);

impl<T: Real> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Var#{}{:?}{}",
            self.0.id,
            self.shape(),
            if self.requires_grad() { " (grad)" } else { "" }
        )
    }
}

impl<T: Real> Var<T> {
    fn new_node(value: Tensor<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            grad_fn,
        }))
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn param(value: Tensor<T>) -> Self {
        Self::new_node(value, true, None)
    }

    /// A leaf that never receives gradients.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::new_node(value, false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::constant(Tensor::scalar(v))
    }

    pub(crate) fn from_op(value: Tensor<T>, inputs: Vec<Var<T>>, backward: BackwardFn<T>) -> Self {
        if is_grad_enabled() && inputs.iter().any(|v| v.requires_grad()) {
            Self::new_node(value, true, Some(GradFn { inputs, backward }))
        } else {
            Self::constant(value)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Self {
        Self::constant(self.0.value.clone())
    }

    pub fn item(&self) -> T {
        self.0.value.item()
    }
}

/// Gradients of `root` (seeded with ones) with respect to each of `wrt`.
pub fn grad<T: Real>(root: &Var<T>, wrt: &[Var<T>], create_graph: bool) -> Vec<Option<Var<T>>> {
    let seed = Var::constant(Tensor::ones(root.shape()));
    grad_with_seed(root, &seed, wrt, create_graph)
}

/// Vector-Jacobian product of `root` with `seed`, restricted to `wrt`.
///
/// With `create_graph` the returned gradients are themselves recorded and
/// can be differentiated again.
pub fn grad_with_seed<T: Real>(
    root: &Var<T>,
    seed: &Var<T>,
    wrt: &[Var<T>],
    create_graph: bool,
) -> Vec<Option<Var<T>>> {
    assert_eq!(root.shape(), seed.shape(), "seed gradient shape mismatch");
    if !root.requires_grad() {
        return vec![None; wrt.len()];
    }

    // Collect the reachable, grad-requiring subgraph.
    let mut nodes: HashMap<u64, Var<T>> = HashMap::new();
    let mut stack = vec![root.clone()];
    while let Some(v) = stack.pop() {
        if !v.requires_grad() || nodes.contains_key(&v.id()) {
            continue;
        }
        if let Some(gf) = &v.0.grad_fn {
            stack.extend(gf.inputs.iter().cloned());
        }
        nodes.insert(v.id(), v);
    }

    // Ids increase with creation order, so ascending id is a topological order.
    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable();

    // A node is needed when it is a target or feeds a needed input.
    let targets: std::collections::HashSet<u64> = wrt.iter().map(|v| v.id()).collect();
    let mut needed: std::collections::HashSet<u64> = std::collections::HashSet::new();
    for id in &order {
        let v = &nodes[id];
        let feeds = targets.contains(id)
            || v
                .0
                .grad_fn
                .as_ref()
                .is_some_and(|gf| gf.inputs.iter().any(|i| needed.contains(&i.id())));
        if feeds {
            needed.insert(*id);
        }
    }

    let run = || {
        let mut grads: HashMap<u64, Var<T>> = HashMap::new();
        grads.insert(root.id(), seed.clone());
        for id in order.iter().rev() {
            if !needed.contains(id) {
                continue;
            }
            let node = &nodes[id];
            let Some(gf) = &node.0.grad_fn else { continue };
            let Some(g) = grads.get(id).cloned() else { continue };
            if !targets.contains(id) {
                grads.remove(id);
            }
            let input_grads = (gf.backward)(&gf.inputs, node, &g);
            debug_assert_eq!(input_grads.len(), gf.inputs.len());
            for (input, ig) in gf.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !needed.contains(&input.id()) {
                    continue;
                }
                debug_assert_eq!(ig.shape(), input.shape(), "gradient shape mismatch");
                let merged = match grads.remove(&input.id()) {
                    Some(prev) => prev.add(&ig),
                    None => ig,
                };
                grads.insert(input.id(), merged);
            }
        }
        wrt.iter().map(|w| grads.get(&w.id()).cloned()).collect::<Vec<_>>()
    };

    if create_graph {
        run()
    } else {
        no_grad(run)
    }
}
