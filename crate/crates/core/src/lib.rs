// NaN must fail comparisons like `!(x < tol)`, so negated partial-order tests are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod diffcore;
pub mod dynamics;
pub mod landscape;
pub mod metacritic;
pub mod nets;
pub mod optim;
pub mod toyoracle;

#[cfg(test)]
pub(crate) mod testutil;
