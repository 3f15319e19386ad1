use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

/// Local gradient rule: maps the output gradient (and the output values) to
/// one optional gradient per recorded input, in input order.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any operations. Tensors produced inside never
/// require gradients.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct GradFn {
    name: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

/// Dense row-major array of `f64` with optional gradient tracking.
///
/// Values are immutable once created; only the gradient slot is written to,
/// and only by [`Tensor::backward`].
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.inner.shape);
        if self.numel() <= 16 {
            d.field("data", &self.inner.data);
        }
        d.field("requires_grad", &self.inner.requires_grad);
        if let Some(g) = &self.inner.grad_fn {
            d.field("op", &g.name);
        }
        d.finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(
        shape: Vec<usize>,
        data: Vec<f64>,
        requires_grad: bool,
        grad_fn: Option<GradFn>,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                grad_fn,
            }),
        }
    }

    /// Builds a constant tensor. Every dimension must be positive and the
    /// product of `shape` must equal `data.len()`. An empty shape is a scalar.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "dimension sizes must be positive, got {shape:?}"
            )));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor::from_parts(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf tensor.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        Ok(Tensor::new(data, shape)?.with_requires_grad(true))
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_parts(Vec::new(), vec![value], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::new(vec![value; numel_of(shape)], shape).expect("valid shape")
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn zeros_like(other: &Tensor) -> Tensor {
        Tensor::zeros(other.shape())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Tensor {
        let data = (0..numel_of(shape)).map(&mut f).collect();
        Tensor::new(data, shape).expect("valid shape")
    }

    /// Returns a leaf copy of this tensor with the given tracking flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Tensor {
        Tensor::from_parts(
            self.inner.shape.clone(),
            self.inner.data.clone(),
            requires_grad,
            None,
        )
    }

    /// Same values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        self.with_requires_grad(false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.grad_fn.as_ref().map(|g| g.name)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() needs a single-element tensor, got shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().expect("grad lock").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock") = None;
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.inner.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Records a new operation output. Gradient tracking is attached only if
    /// recording is enabled and some input requires gradients.
    pub(crate) fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let track = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if track {
            Tensor::from_parts(
                shape,
                data,
                true,
                Some(GradFn {
                    name,
                    inputs,
                    backward,
                }),
            )
        } else {
            Tensor::from_parts(shape, data, false, None)
        }
    }

    /// Reverse-mode pass from a single-element tensor. Gradients are summed
    /// into every reachable tensor that requires them, including
    /// intermediates. Returns the record of replayed operations.
    pub fn backward(&self) -> Result<ComputationRecord> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward called on a tensor that does not require gradients".into(),
            ));
        }

        let order = self.topological_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        let mut record = ComputationRecord::default();

        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.id()) else {
                continue;
            };
            node.accumulate_grad(&g);
            let Some(grad_fn) = &node.inner.grad_fn else {
                continue;
            };
            record.entries.push(RecordEntry {
                op: grad_fn.name,
                inputs: grad_fn.inputs.iter().map(Tensor::id).collect(),
                output: node.id(),
            });
            let input_grads = (grad_fn.backward)(&g, node.data());
            debug_assert_eq!(input_grads.len(), grad_fn.inputs.len());
            for (input, ig) in grad_fn.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel(), "op {}", grad_fn.name);
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    None => {
                        pending.insert(input.id(), ig);
                    }
                }
            }
        }
        record.entries.reverse();
        Ok(record)
    }

    /// Nodes reachable through gradient-tracking edges, inputs first.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(g) = &node.inner.grad_fn {
                for input in &g.inputs {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}

/// One replayed operation: op name plus input and output tensor ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEntry {
    pub op: &'static str,
    pub inputs: Vec<u64>,
    pub output: u64,
}

/// Operations visited by a backward pass, listed in forward (topological)
/// order.
#[derive(Debug, Clone, Default)]
pub struct ComputationRecord {
    pub entries: Vec<RecordEntry>,
}

impl ComputationRecord {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when every operation's inputs are produced before it (or are
    /// leaves) and no output appears twice.
    pub fn is_topologically_consistent(&self) -> bool {
        let produced: HashMap<u64, usize> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.output, i))
            .collect();
        if produced.len() != self.entries.len() {
            return false;
        }
        self.entries.iter().enumerate().all(|(i, e)| {
            e.inputs
                .iter()
                .all(|id| produced.get(id).map_or(true, |&j| j < i))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(Tensor::new(vec![1.0; 5], &[2, 3]), Err(Error::Shape(_))));
        assert!(matches!(Tensor::new(vec![], &[0, 3]), Err(Error::Shape(_))));
        assert_eq!(Tensor::scalar(2.0).shape(), &[] as &[usize]);
    }

    #[test]
    fn no_grad_disables_recording() {
        let a = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let b = no_grad(|| a.mul_scalar(2.0));
        assert!(!b.requires_grad());
        assert!(grad_enabled());
        let c = a.mul_scalar(2.0);
        assert!(c.requires_grad());
    }

    #[test]
    fn backward_requires_scalar() {
        let a = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.mul_scalar(3.0);
        assert!(matches!(b.backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(u * u) with u = 3a  vs the duplicated form sum((3a) * (3a'))
        let a = Tensor::param(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let u = a.mul_scalar(3.0);
        let f = u.mul(&u).unwrap().sum_all();
        let record = f.backward().unwrap();
        assert!(record.is_topologically_consistent());
        let shared = a.grad().unwrap();

        let b = Tensor::param(vec![0.5, -1.0, 2.0], &[3]).unwrap();
        let u1 = b.mul_scalar(3.0);
        let u2 = b.mul_scalar(3.0);
        u1.mul(&u2).unwrap().sum_all().backward().unwrap();
        assert_eq!(shared, b.grad().unwrap());
        // d/da 9a^2 = 18a
        assert_eq!(shared, vec![9.0, -18.0, 36.0]);
    }

    #[test]
    fn record_visits_each_op_once() {
        let a = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let b = a.exp();
        let c = b.add(&b).unwrap();
        let d = c.mul(&a).unwrap().sum_all();
        let record = d.backward().unwrap();
        let ops: Vec<_> = record.entries.iter().map(|e| e.op).collect();
        assert_eq!(ops, vec!["exp", "add", "mul", "sum_all"]);
        assert!(record.is_topologically_consistent());
    }

    #[test]
    fn intermediates_receive_gradients() {
        let a = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let b = a.mul_scalar(2.0);
        let c = b.sum_all();
        c.backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![1.0, 1.0]);
        assert_eq!(c.grad().unwrap(), vec![1.0]);
    }
}
