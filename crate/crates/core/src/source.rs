//! Where pixel data comes from. Training and evaluation read images only
//! through [`ImageSource`], which lets tests observe exactly which channel
//! of which cell was touched.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::data::{CellRecord, Channel, Manifest};
use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};

pub trait ImageSource: Send + Sync {
    fn load(&self, record: &CellRecord, channel: Channel) -> Result<GrayImage>;
}

/// Reads PNGs relative to a manifest's image root, caching decoded images.
pub struct DiskSource {
    root: std::path::PathBuf,
    cache: Mutex<HashMap<(String, Channel), GrayImage>>,
}

impl DiskSource {
    pub fn new(manifest: &Manifest) -> Self {
        DiskSource {
            root: manifest.image_root.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl ImageSource for DiskSource {
    fn load(&self, record: &CellRecord, channel: Channel) -> Result<GrayImage> {
        let key = (record.cell_id.clone(), channel);
        if let Some(img) = self.cache.lock().expect("image cache poisoned").get(&key) {
            return Ok(img.clone());
        }
        let rel = record.path(channel).ok_or_else(|| Error::MissingChannel {
            cell_id: record.cell_id.clone(),
            channel: channel.to_string(),
        })?;
        let img = imaging::load_gray(&self.root.join(rel))?;
        self.cache
            .lock()
            .expect("image cache poisoned")
            .insert(key, img.clone());
        Ok(img)
    }
}

/// In-memory images keyed by (cell_id, channel).
#[derive(Default)]
pub struct MemorySource {
    images: HashMap<(String, Channel), GrayImage>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, cell_id: &str, channel: Channel, image: GrayImage) {
        self.images.insert((cell_id.to_string(), channel), image);
    }
}

impl ImageSource for MemorySource {
    fn load(&self, record: &CellRecord, channel: Channel) -> Result<GrayImage> {
        self.images
            .get(&(record.cell_id.clone(), channel))
            .cloned()
            .ok_or_else(|| Error::MissingChannel {
                cell_id: record.cell_id.clone(),
                channel: channel.to_string(),
            })
    }
}

/// Wraps a source and records every `(cell_id, channel)` access.
pub struct LoggingSource<S> {
    inner: S,
    log: Arc<Mutex<Vec<(String, Channel)>>>,
}

impl<S: ImageSource> LoggingSource<S> {
    pub fn new(inner: S) -> Self {
        LoggingSource {
            inner,
            log: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn handle(&self) -> Arc<Mutex<Vec<(String, Channel)>>> {
        Arc::clone(&self.log)
    }

    pub fn take(&self) -> Vec<(String, Channel)> {
        std::mem::take(&mut *self.log.lock().expect("access log poisoned"))
    }
}

impl<S: ImageSource> ImageSource for LoggingSource<S> {
    fn load(&self, record: &CellRecord, channel: Channel) -> Result<GrayImage> {
        self.log
            .lock()
            .expect("access log poisoned")
            .push((record.cell_id.clone(), channel));
        self.inner.load(record, channel)
    }
}

impl<S: ImageSource + ?Sized> ImageSource for &S {
    fn load(&self, record: &CellRecord, channel: Channel) -> Result<GrayImage> {
        (**self).load(record, channel)
    }
}

impl<S: ImageSource + ?Sized> ImageSource for Arc<S> {
    fn load(&self, record: &CellRecord, channel: Channel) -> Result<GrayImage> {
        (**self).load(record, channel)
    }
}
