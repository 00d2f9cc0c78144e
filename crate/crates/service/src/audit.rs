//! Append-only CSV log of every recommendation list served.

use std::fs::{File, OpenOptions};
use std::io;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use mirror_core::recommender::Recommendation;
use mirror_core::SessionId;

pub const HEADER: [&str; 5] = ["session_id", "rank", "account_id", "marginal_gain", "timestamp"];

pub struct RecommendationAudit {
    writer: csv::Writer<File>,
}

impl RecommendationAudit {
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut writer = csv::Writer::from_writer(file);
        if fresh {
            writer.write_record(HEADER)?;
            writer.flush()?;
        }
        Ok(Self { writer })
    }

    pub fn record(&mut self, session: SessionId, recs: &[Recommendation], at: DateTime<Utc>) -> io::Result<()> {
        let timestamp = at.to_rfc3339_opts(SecondsFormat::Secs, true);
        for rec in recs {
            self.writer.write_record([
                session.to_string(),
                rec.rank.to_string(),
                rec.account.to_string(),
                rec.marginal_gain.to_string(),
                timestamp.clone(),
            ])?;
        }
        self.writer.flush()
    }
}
