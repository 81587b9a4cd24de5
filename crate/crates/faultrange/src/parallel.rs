//! Multi-threaded campaign execution.

use faultrange_core::campaign::{Campaign, CampaignReport, RunRecord};
use rayon::prelude::*;

use crate::error::Result;

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| faultrange_core::Error::Config(format!("thread pool: {e}")).into())
}

/// Epochs run on `workers` threads; per-epoch results are gathered in epoch
/// order, so the report does not depend on the worker count.
pub fn run_campaign(campaign: &Campaign<'_>, workers: usize) -> Result<CampaignReport> {
    let epochs = campaign.config().epochs as u64;
    let per_epoch = pool(workers)?.install(|| {
        (0..epochs)
            .into_par_iter()
            .map(|e| campaign.run_epoch(e).map(|r| campaign.count(&r)))
            .collect::<faultrange_core::Result<Vec<_>>>()
    })?;
    let mut counts = campaign.empty_counts();
    per_epoch.iter().for_each(|c| counts.merge(c));
    Ok(campaign.report(counts))
}

/// Like [`run_campaign`], also returning every run in (epoch, subset) order.
pub fn run_campaign_records(campaign: &Campaign<'_>, workers: usize) -> Result<(CampaignReport, Vec<RunRecord>)> {
    let epochs = campaign.config().epochs as u64;
    let per_epoch = pool(workers)?.install(|| {
        (0..epochs)
            .into_par_iter()
            .map(|e| campaign.run_epoch(e))
            .collect::<faultrange_core::Result<Vec<_>>>()
    })?;
    let records: Vec<RunRecord> = per_epoch.into_iter().flatten().collect();
    Ok((campaign.report(campaign.count(&records)), records))
}
