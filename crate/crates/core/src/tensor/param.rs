use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a parameter within a process; used to map graph leaves back
/// to their owners after a backward sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

/// A trainable tensor with its gradient buffer.
#[derive(Clone, Debug)]
pub struct Parameter {
    id: ParamId,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            id: ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
            value,
            grad,
            trainable: true,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

impl PartialEq for Parameter {
    /// Compares values and trainability, not identity.
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value && self.trainable == other.trainable
    }
}
