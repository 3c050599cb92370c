#![allow(dead_code)]

use std::sync::OnceLock;

use fracsaddle::fracops1d::d_gamma_exact;
use fracsaddle::grid::{Grid3, GridSpec};
use fracsaddle::layer::{solve_layer, LayerOptions, LayerSolution};
use fracsaddle::problem::{NonlinearityModel, ProblemParams};
use fracsaddle::saddle::{solve_saddle, BarrierTable, SaddleField, SaddleInit, SaddleOptions};

pub fn cubic_layer() -> &'static LayerSolution {
    static L: OnceLock<LayerSolution> = OnceLock::new();
    L.get_or_init(|| {
        solve_layer(&NonlinearityModel::cubic(), 0.5, 40.0, 800, 1e-9, &LayerOptions::default()).unwrap()
    })
}

/// A coarse saddle solution at γ = 1/2 on S = Λ = 8.
pub fn small_saddle(m: usize, n: usize, nl: usize) -> (SaddleField, BarrierTable) {
    let ls = cubic_layer();
    let params = ProblemParams::new(m, 0.5, d_gamma_exact(0.5)).unwrap();
    let grid = Grid3::new(GridSpec::new(8.0, 8.0, n, nl), &params).unwrap();
    let bt = BarrierTable::new(ls, &grid);
    let sf = solve_saddle(&grid, &params, &NonlinearityModel::cubic(), &bt, 1e-9, SaddleInit::Barrier, &SaddleOptions::default())
        .unwrap();
    (sf, bt)
}
