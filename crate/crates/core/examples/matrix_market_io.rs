//! Write a matrix in Matrix Market format, read it back and solve.

use hybrid_svds::matio::{random_sparse, write_matrix_market};
use hybrid_svds::{read_matrix_market, svds_solve, SvdsConfig};

fn main() -> hybrid_svds::Result<()> {
    let path = std::env::temp_dir().join("hybrid_svds_example.mtx");
    write_matrix_market(&path, &random_sparse(300, 200, 0.02, 3)?)?;

    let a = read_matrix_market(&path)?;
    println!("read {}x{} with {} nonzeros from {}", a.nrows(), a.ncols(), a.nnz(), path.display());
    let r = svds_solve(&a, None, &SvdsConfig { num_svals: 3, ..SvdsConfig::default() })?;
    println!("largest: {:?}", r.sigma);
    std::fs::remove_file(&path).ok();
    Ok(())
}
