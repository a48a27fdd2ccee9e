use super::Real;

pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

pub fn silu<R: Real>(x: R) -> R {
    x * sigmoid(x)
}

/// d silu / dx = σ(x)·(1 + x·(1 − σ(x))).
pub fn silu_grad<R: Real>(x: R) -> R {
    let s = sigmoid(x);
    s * (R::one() + x * (R::one() - s))
}

/// `ln(1 + eˣ)`, linear above 20 and exponential below −20.
pub fn softplus<R: Real>(x: R) -> R {
    let bound = R::c(20.0);
    if x > bound {
        x
    } else if x < -bound {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn relu<R: Real>(x: R) -> R {
    if x > R::zero() {
        x
    } else {
        R::zero()
    }
}
