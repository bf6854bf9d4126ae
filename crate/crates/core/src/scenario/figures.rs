//! Figure data as CSV: raw values only, plotting is left to external tools.

use std::collections::BTreeMap;

use super::experiment::ExperimentResult;
use crate::error::ScenarioError;
use crate::recon::probe::ObservationRecord;

/// Per-batch responses versus requests.
pub fn responses_csv(result: &ExperimentResult) -> Result<String, ScenarioError> {
    if result.output.batch_stats.is_empty() {
        return Err(ScenarioError::MissingCampaignData("fig3_responses"));
    }
    let mut out = String::from("batch,requests,responses\n");
    for stat in &result.output.batch_stats {
        out.push_str(&format!(
            "{},{},{}\n",
            stat.index, stat.issued, stat.responses
        ));
    }
    Ok(out)
}

/// Per-request success bitmap of the burst scan (1 success, 0 failure).
pub fn bitmap_csv(result: &ExperimentResult) -> Result<String, ScenarioError> {
    let Some(bitmap) = &result.output.bitmap else {
        return Err(ScenarioError::MissingCampaignData("fig4_bitmap"));
    };
    let mut out = String::from("request_index,outcome\n");
    for (i, ok) in bitmap.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, u8::from(*ok)));
    }
    Ok(out)
}

/// Success ratio of every batch that ended in detection.
pub fn success_ratio_csv(result: &ExperimentResult) -> Result<String, ScenarioError> {
    if result.output.batch_stats.is_empty() || result.output.boundary.is_none() {
        return Err(ScenarioError::MissingCampaignData("fig5_success_ratio"));
    }
    let mut out = String::from("batch,success_ratio\n");
    for stat in result.output.batch_stats.iter().filter(|s| s.detected) {
        out.push_str(&format!("{},{:.6}\n", stat.index, stat.success_ratio));
    }
    Ok(out)
}

/// Empirical CDF of the failed-connection ratio over detected batches.
/// Nondecreasing, ending at 1.0.
pub fn failed_cdf_csv(result: &ExperimentResult) -> Result<String, ScenarioError> {
    if result.output.batch_stats.is_empty() || result.output.boundary.is_none() {
        return Err(ScenarioError::MissingCampaignData("fig6_failed_cdf"));
    }
    let mut ratios: Vec<f64> = result
        .output
        .batch_stats
        .iter()
        .filter(|s| s.detected)
        .map(|s| s.failed_ratio)
        .collect();
    if ratios.is_empty() {
        return Err(ScenarioError::MissingCampaignData("fig6_failed_cdf"));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).expect("ratios are finite"));
    let n = ratios.len() as f64;
    let mut out = String::from("failed_ratio,cumulative_fraction\n");
    for (i, r) in ratios.iter().enumerate() {
        out.push_str(&format!("{:.6},{:.6}\n", r, (i + 1) as f64 / n));
    }
    Ok(out)
}

/// All the figures this run's campaigns can back, keyed by file name.
pub fn emit_figures(
    result: &ExperimentResult,
) -> Result<BTreeMap<String, String>, ScenarioError> {
    let mut files = BTreeMap::new();
    if !result.output.batch_stats.is_empty() {
        files.insert("fig3_responses.csv".to_string(), responses_csv(result)?);
    }
    if result.output.bitmap.is_some() {
        files.insert("fig4_bitmap.csv".to_string(), bitmap_csv(result)?);
    }
    if result.output.boundary.is_some() && !result.output.batch_stats.is_empty() {
        files.insert(
            "fig5_success_ratio.csv".to_string(),
            success_ratio_csv(result)?,
        );
        files.insert("fig6_failed_cdf.csv".to_string(), failed_cdf_csv(result)?);
    }
    Ok(files)
}

/// Observation records flattened to one row per probe.
pub fn observations_csv(records: &[ObservationRecord]) -> String {
    let mut out = String::from(
        "batch,kind,src,probe_index,dst,expect_reply,sent,replied,reply_time,detected\n",
    );
    for (b, record) in records.iter().enumerate() {
        for i in 0..record.issued {
            let target = &record.batch.targets[i];
            let reply = record.replies.iter().find(|r| r.probe_index == i);
            let replied = reply.is_some_and(|r| r.replied);
            let reply_time = reply
                .and_then(|r| r.reply_time)
                .map(|t| t.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{:?},{},{},{},{},{},{},{},{}\n",
                b,
                record.batch.kind,
                record.batch.src_ip,
                i,
                target.dst,
                u8::from(target.expect_reply),
                record.probe_sent[i],
                u8::from(replied),
                reply_time,
                u8::from(record.detected),
            ));
        }
    }
    out
}
