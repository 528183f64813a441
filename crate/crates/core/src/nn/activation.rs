use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Element-wise nonlinearity applied after a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Tanh approximation.
    Gelu,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Gelu => 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()),
            Self::Identity => x,
            Self::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative with respect to the pre-activation. Relu uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
            }
            Self::Identity => 1.0,
            Self::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// Global Lipschitz constant (sup of |σ'|).
    pub fn lipschitz(self) -> f64 {
        match self {
            Self::Relu | Self::Identity => 1.0,
            Self::Sigmoid => 0.25,
            Self::Gelu => 1.128_993_068_658_571,
        }
    }

    pub fn is_monotone(self) -> bool {
        !matches!(self, Self::Gelu)
    }

    pub fn tag(self) -> u8 {
        match self {
            Self::Relu => 0,
            Self::Gelu => 1,
            Self::Identity => 2,
            Self::Sigmoid => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Self::Relu,
            1 => Self::Gelu,
            2 => Self::Identity,
            3 => Self::Sigmoid,
            t => return Err(Error::UnsupportedFormat(format!("activation tag {t}"))),
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
