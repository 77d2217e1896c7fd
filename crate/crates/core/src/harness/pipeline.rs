use super::config::ExperimentConfig;
use crate::adaptation::{init_proxies, prepare_dictionary, proxy_domains, ProxyBank};
use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::exec::Exec;
use crate::sensorsim::SensorStream;
use crate::training::{branch_t_rmse, train_inertial_decoder, train_vio, Branch, Dataset, TrainReport};
use crate::vionet::{init_network, VioNetwork};

/// Seed of the proxy sample corruptions.
pub const PROXY_SEED: u64 = 7;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: VioNetwork,
    pub stage1: TrainReport,
    pub stage2: TrainReport,
    /// validation t_rmse of the fused and inertial branches, clean data
    pub fused_val_t_rmse: f64,
    pub inertial_val_t_rmse: f64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &ExperimentConfig, proxies: Option<&ProxyBank>) -> Checkpoint {
        let mut ck = Checkpoint::from_network(&self.net);
        ck.train_stage1 = Some(cfg.train.clone());
        ck.train_stage2 = Some(cfg.train_stage2.clone());
        ck.data_seed = cfg.data.train_scenes().first().map(|s| s.seed);
        ck.proxies = proxies.cloned();
        ck
    }
}

/// Both training stages on `streams`, from a fresh network seeded by the
/// stage-1 config.
pub fn train_model(cfg: &ExperimentConfig, streams: &[SensorStream], exec: Exec) -> Result<TrainOutcome> {
    let mut net = init_network(&cfg.network_config()?, cfg.train.seed)?;
    net.set_exec(exec);
    let data = Dataset::new(streams);
    let stage1 = train_vio(&mut net, &data, &cfg.train)?;
    let stage2 = train_inertial_decoder(&mut net, &data, &cfg.train_stage2)?;
    let (_, val) = data.split(cfg.train.seed, cfg.train.val_fraction);
    Ok(TrainOutcome {
        fused_val_t_rmse: branch_t_rmse(&net, &data, &val, Branch::Fused)?,
        inertial_val_t_rmse: branch_t_rmse(&net, &data, &val, Branch::Inertial)?,
        net,
        stage1,
        stage2,
    })
}

/// Proxy bank from the calibration stream; sizes the dictionary to match.
pub fn attach_proxies(cfg: &ExperimentConfig, net: &mut VioNetwork, calib: &SensorStream) -> Result<ProxyBank> {
    let p = &cfg.protocol;
    let domains = proxy_domains(calib, cfg.adapt.proxy_samples, &p.noises, p.severity, PROXY_SEED)?;
    let bank = init_proxies(net, &domains)?;
    prepare_dictionary(net, &bank);
    Ok(bank)
}

/// Data generation, training and proxy initialization in one go.
pub fn build_reference(cfg: &ExperimentConfig, exec: Exec) -> Result<(TrainOutcome, Checkpoint)> {
    let net_cfg = cfg.network_config()?;
    let streams = cfg.data.train_streams(&net_cfg, exec)?;
    let mut out = train_model(cfg, &streams, exec)?;
    let calib = cfg.data.calib_stream(&net_cfg, exec)?;
    let bank = attach_proxies(cfg, &mut out.net, &calib)?;
    let ck = out.checkpoint(cfg, Some(&bank));
    Ok((out, ck))
}
