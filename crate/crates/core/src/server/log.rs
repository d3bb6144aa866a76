//! Append-only server log.
//!
//! One entry per line, each line the standard base64 encoding of a framed
//! entry: a kind byte followed by its body.
//!
//! | kind | body |
//! |------|------|
//! | 0x01 | epoch u64 BE, then one wire-encoded record |
//! | 0x02 | closed epoch u64 BE |
//! | 0x03 | stat code u8 (0 infected upload, 1 second-level upload, 2 superspreader flag, 3 direct notification, 4 second-level notification, 5 feed fetch + epoch u64 BE) |

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::wire::{decode_record, encode_record, Reader};
use super::{NotificationKind, TokenUploadRecord};
use crate::error::{LogError, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatEvent {
    InfectedUpload,
    SecondLevelUpload,
    SuperspreaderFlag,
    Notification(NotificationKind),
    FeedFetch { epoch: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Record { epoch: u64, record: TokenUploadRecord },
    EpochClosed { epoch: u64 },
    Stat(StatEvent),
}

impl LogEntry {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            LogEntry::Record { epoch, record } => {
                out.push(0x01);
                out.extend_from_slice(&epoch.to_be_bytes());
                encode_record(&mut out, record);
            }
            LogEntry::EpochClosed { epoch } => {
                out.push(0x02);
                out.extend_from_slice(&epoch.to_be_bytes());
            }
            LogEntry::Stat(event) => {
                out.push(0x03);
                match event {
                    StatEvent::InfectedUpload => out.push(0),
                    StatEvent::SecondLevelUpload => out.push(1),
                    StatEvent::SuperspreaderFlag => out.push(2),
                    StatEvent::Notification(NotificationKind::Direct) => out.push(3),
                    StatEvent::Notification(NotificationKind::SecondLevel) => out.push(4),
                    StatEvent::FeedFetch { epoch } => {
                        out.push(5);
                        out.extend_from_slice(&epoch.to_be_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let entry = match r.u8()? {
            0x01 => {
                let epoch = r.u64()?;
                LogEntry::Record { epoch, record: decode_record(&mut r)? }
            }
            0x02 => LogEntry::EpochClosed { epoch: r.u64()? },
            0x03 => LogEntry::Stat(match r.u8()? {
                0 => StatEvent::InfectedUpload,
                1 => StatEvent::SecondLevelUpload,
                2 => StatEvent::SuperspreaderFlag,
                3 => StatEvent::Notification(NotificationKind::Direct),
                4 => StatEvent::Notification(NotificationKind::SecondLevel),
                5 => StatEvent::FeedFetch { epoch: r.u64()? },
                _ => return Err(WireError::Malformed("stat code")),
            }),
            _ => return Err(WireError::Malformed("log entry kind")),
        };
        r.finish()?;
        Ok(entry)
    }
}

pub struct AppendLog {
    out: BufWriter<File>,
}

impl AppendLog {
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: BufWriter::new(file) })
    }

    pub fn append(&mut self, entry: &LogEntry) -> Result<(), LogError> {
        writeln!(self.out, "{}", STANDARD.encode(entry.encode()))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

/// Reads every entry of a log file in order.
pub fn replay_log(path: &Path) -> Result<Vec<LogEntry>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let corrupt = |reason: String| LogError::Corrupt { line: i + 1, reason };
        let bytes = STANDARD.decode(line.trim()).map_err(|e| corrupt(e.to_string()))?;
        entries.push(LogEntry::decode(&bytes).map_err(|e| corrupt(e.to_string()))?);
    }
    Ok(entries)
}
