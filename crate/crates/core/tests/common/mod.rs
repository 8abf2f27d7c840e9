#![allow(dead_code)]

use biosig::config::{CnnConfig, EncoderConfig, ModelKind, RunConfig};
use biosig::models::checkpoint::Checkpoint;
use biosig::models::train::{History, Prepared};
use biosig::models::Model;
use biosig::spectral::{Dataset, GenerateParams, GridParams, NormalizerState, Split, WavelengthGrid};

/// Small architectures that run in milliseconds.
pub fn tiny(kind: ModelKind) -> RunConfig {
    let mut c = RunConfig::desk(kind);
    let net = CnnConfig { filters: vec![3, 4], kernels: vec![5, 3], fc: vec![6], dropout: 0.1 };
    c.cnn = net.clone();
    c.bcnn.net = net;
    let enc = EncoderConfig { dim: 8, layers: 1, heads: 2, mlp_ratio: 2, dropout: 0.1 };
    c.vit.encoder = enc.clone();
    c.squat.encoder = enc;
    c.squat.branch_channels = Some(3);
    c.squat.interaction_heads = 2;
    c
}

pub struct Fixture {
    pub ds: Dataset,
    pub norm: NormalizerState,
    pub test: Prepared,
}

pub fn fixture(n: usize) -> Fixture {
    let ds = Dataset::generate(&GenerateParams { n, ..Default::default() }).unwrap();
    let norm = NormalizerState::fit(&ds.train()).unwrap();
    let test = Prepared::from_dataset(&ds, &norm, &ds.indices(Split::Test)).unwrap();
    Fixture { ds, norm, test }
}

/// Untrained weights wrapped as a checkpoint; `trained` marks it as if a
/// training run had produced it.
pub fn checkpoint(cfg: &RunConfig, fx: &Fixture, trained: bool) -> Checkpoint {
    let grid = WavelengthGrid::build(GridParams::default()).unwrap();
    let model = Model::<f32>::build(cfg, &grid, &fx.ds.meta().catalog, 5).unwrap();
    let history = trained.then(History::default);
    Checkpoint::new(model, cfg, 5, fx.norm.clone(), GridParams::default(), fx.ds.meta().catalog.clone(), None, history)
}
