use std::collections::VecDeque;

use tracing::{debug, warn};

use crate::model::MetricSample;
use crate::wire::{ClientError, Transport, WireClient};

/// Outbound sample link to an importer.
pub trait Uplink: Send {
    fn send(&mut self, sample: &MetricSample) -> Result<(), ClientError>;
}

impl<T: Transport + Send> Uplink for WireClient<T> {
    fn send(&mut self, sample: &MetricSample) -> Result<(), ClientError> {
        self.send_sample(sample)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PublisherStats {
    pub produced: u64,
    pub delivered: u64,
    pub spooled: u64,
    pub dropped: u64,
}

impl PublisherStats {
    /// `delivered + spooled + dropped == produced`.
    pub fn balanced(&self) -> bool {
        self.delivered + self.spooled + self.dropped == self.produced
    }
}

/// Sends samples upstream, spooling to a bounded drop-oldest ring while
/// disconnected.
pub struct Publisher {
    link: Option<Box<dyn Uplink>>,
    spool: VecDeque<MetricSample>,
    capacity: usize,
    produced: u64,
    delivered: u64,
    dropped: u64,
}

impl Publisher {
    pub fn new(capacity: usize) -> Self {
        Publisher {
            link: None,
            spool: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
            produced: 0,
            delivered: 0,
            dropped: 0,
        }
    }

    pub fn is_connected(&self) -> bool {
        self.link.is_some()
    }

    pub fn attach(&mut self, link: Box<dyn Uplink>) {
        self.link = Some(link);
    }

    pub fn detach(&mut self) {
        self.link = None;
    }

    pub fn stats(&self) -> PublisherStats {
        PublisherStats {
            produced: self.produced,
            delivered: self.delivered,
            spooled: self.spool.len() as u64,
            dropped: self.dropped,
        }
    }

    fn enqueue(&mut self, sample: MetricSample) {
        if self.capacity == 0 {
            self.dropped += 1;
            return;
        }
        if self.spool.len() == self.capacity {
            self.spool.pop_front();
            self.dropped += 1;
        }
        self.spool.push_back(sample);
    }

    /// Push spooled samples out. Returns how many were delivered.
    pub fn flush(&mut self) -> u64 {
        let Some(link) = self.link.as_mut() else {
            return 0;
        };
        let mut sent = 0;
        while let Some(s) = self.spool.front() {
            match link.send(s) {
                Ok(()) => {
                    self.spool.pop_front();
                    sent += 1;
                }
                Err(e) => {
                    warn!(error = %e, "uplink lost; spooling");
                    self.link = None;
                    break;
                }
            }
        }
        self.delivered += sent;
        sent
    }

    /// Publish one cycle's samples in timestamp order, after anything
    /// already spooled. Returns the number delivered in this call.
    pub fn publish(&mut self, mut samples: Vec<MetricSample>) -> u64 {
        samples.sort_by_key(|s| s.timestamp());
        self.produced += samples.len() as u64;
        let mut sent = self.flush();
        for s in samples {
            if !self.spool.is_empty() {
                self.enqueue(s);
                continue;
            }
            let Some(link) = self.link.as_mut() else {
                self.enqueue(s);
                continue;
            };
            match link.send(&s) {
                Ok(()) => {
                    self.delivered += 1;
                    sent += 1;
                }
                Err(e) => {
                    warn!(error = %e, "uplink lost; spooling");
                    self.link = None;
                    self.enqueue(s);
                }
            }
        }
        if !self.spool.is_empty() {
            debug!(spooled = self.spool.len(), "samples held");
        }
        sent
    }
}
