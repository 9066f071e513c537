//! Idealized two-basis qubit model.
//!
//! States are eigenstates of one of two conjugate observables, labelled
//! X (basis bit 0) and Y (basis bit 1), with |+> coding 1 and |-> coding 0.
//! Because every preparation and measurement uses one of these two bases,
//! the exact quantum statistics reduce to one rule: measuring in the
//! preparation basis returns the prepared bit, measuring in the other basis
//! returns a fair coin and leaves the qubit in the measured eigenstate.

use std::fmt;
use std::ops::{BitXor, BitXorAssign, Not};

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
}

impl Basis {
    pub fn complement(self) -> Basis {
        match self {
            Basis::X => Basis::Y,
            Basis::Y => Basis::X,
        }
    }

    /// X = 0, Y = 1.
    pub fn as_bit(self) -> Bit {
        Bit(self == Basis::Y)
    }

    pub fn from_bit(bit: Bit) -> Basis {
        if bit.is_one() {
            Basis::Y
        } else {
            Basis::X
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Basis {
        if rng.random::<bool>() {
            Basis::Y
        } else {
            Basis::X
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Basis::X => 'X',
            Basis::Y => 'Y',
        }
    }

    pub fn from_symbol(c: char) -> Option<Basis> {
        match c {
            'X' | '0' => Some(Basis::X),
            'Y' | '1' => Some(Basis::Y),
            _ => None,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// A classical bit. Under the coding convention |+> is 1 and |-> is 0.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
pub struct Bit(bool);

impl Bit {
    pub const ZERO: Bit = Bit(false);
    pub const ONE: Bit = Bit(true);

    pub fn new(value: bool) -> Self {
        Bit(value)
    }

    pub fn is_one(self) -> bool {
        self.0
    }

    pub fn as_u8(self) -> u8 {
        u8::from(self.0)
    }

    pub fn from_u8(v: u8) -> Option<Bit> {
        match v {
            0 => Some(Bit::ZERO),
            1 => Some(Bit::ONE),
            _ => None,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Bit {
        Bit(rng.random())
    }
}

impl From<bool> for Bit {
    fn from(v: bool) -> Self {
        Bit(v)
    }
}

impl BitXor for Bit {
    type Output = Bit;
    fn bitxor(self, rhs: Bit) -> Bit {
        Bit(self.0 ^ rhs.0)
    }
}

impl BitXorAssign for Bit {
    fn bitxor_assign(&mut self, rhs: Bit) {
        self.0 ^= rhs.0;
    }
}

impl Not for Bit {
    type Output = Bit;
    fn not(self) -> Bit {
        Bit(!self.0)
    }
}

impl fmt::Display for Bit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

/// A BB84 signal state, fully specified by its basis and coded bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Qubit {
    pub basis: Basis,
    pub bit: Bit,
}

pub fn prepare(basis: Basis, bit: Bit) -> Qubit {
    Qubit { basis, bit }
}

/// Measures `q` in `basis`. Returns the outcome and the post-measurement
/// state, which is what an intercept/resend party forwards.
pub fn measure<R: Rng + ?Sized>(q: Qubit, basis: Basis, rng: &mut R) -> (Bit, Qubit) {
    if basis == q.basis {
        (q.bit, q)
    } else {
        let outcome = Bit::random(rng);
        (outcome, prepare(basis, outcome))
    }
}

/// A uniformly random preparation, as a sender chooses it.
pub fn random_qubit<R: Rng + ?Sized>(rng: &mut R) -> Qubit {
    let basis = Basis::random(rng);
    prepare(basis, Bit::random(rng))
}
