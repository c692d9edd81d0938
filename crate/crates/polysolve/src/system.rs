use nalgebra::{ComplexField, DMatrix};

/// Field the solvers work over: `f64` or `Complex<f64>`.
pub trait Scalar: ComplexField<RealField = f64> + Copy + Send + Sync {}

impl<T> Scalar for T where T: ComplexField<RealField = f64> + Copy + Send + Sync {}

/// A polynomial system `F(x) = 0` that can be evaluated in any [`Scalar`].
pub trait System: Sync {
    /// Number of unknowns.
    fn dim(&self) -> usize;

    /// Number of equations. Defaults to a square system.
    fn num_equations(&self) -> usize {
        self.dim()
    }

    /// Total degree of each equation.
    fn degrees(&self) -> Vec<u32>;

    /// Writes `F(x)` into `f` and, if requested, the Jacobian with one row
    /// per equation.
    fn evaluate<T: Scalar>(&self, x: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>);

    fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

/// A homotopy `H(x, t)` tracked by the predictor-corrector loop.
pub trait Homotopy<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// Writes `H`, `∂H/∂x` and `∂H/∂t` at `(x, t)`.
    fn evaluate(&self, x: &[T], t: f64, h: &mut [T], hx: &mut DMatrix<T>, ht: &mut [T]);
}

/// A family of square systems depending polynomially on a real parameter.
///
/// Every family is a [`Homotopy`] over both real and complex scalars.
pub trait ParameterFamily: Sync {
    fn dim(&self) -> usize;

    fn degrees(&self) -> Vec<u32>;

    fn evaluate<T: Scalar>(
        &self,
        x: &[T],
        t: f64,
        h: &mut [T],
        hx: Option<&mut DMatrix<T>>,
        ht: Option<&mut [T]>,
    );
}

impl<T: Scalar, P: ParameterFamily> Homotopy<T> for P {
    fn dim(&self) -> usize {
        ParameterFamily::dim(self)
    }

    fn evaluate(&self, x: &[T], t: f64, h: &mut [T], hx: &mut DMatrix<T>, ht: &mut [T]) {
        ParameterFamily::evaluate(self, x, t, h, Some(hx), Some(ht));
    }
}

/// A member `H(·, t)` of a parameter family, viewed as a plain system.
pub struct AtParameter<'a, P: ParameterFamily> {
    pub family: &'a P,
    pub t: f64,
}

impl<P: ParameterFamily> System for AtParameter<'_, P> {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn degrees(&self) -> Vec<u32> {
        self.family.degrees()
    }

    fn evaluate<T: Scalar>(&self, x: &[T], f: &mut [T], jac: Option<&mut DMatrix<T>>) {
        self.family.evaluate(x, self.t, f, jac, None);
    }
}
