pub(crate) mod activation;
pub(crate) mod attention;
pub(crate) mod conv;
pub(crate) mod dense;
mod elementwise;
pub(crate) mod loss;
pub(crate) mod norm;
pub(crate) mod pool;
