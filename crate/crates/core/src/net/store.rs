use std::collections::HashMap;
use std::sync::Mutex;

use super::{NetError, ObjectId};

/// Thread-safe map from object id to serialized chain bytes.
#[derive(Debug, Default)]
pub struct ObjectStore {
    objects: Mutex<HashMap<ObjectId, Vec<u8>>>,
}

impl ObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<ObjectId, Vec<u8>>> {
        // A panic while holding the lock cannot leave the map half-updated.
        self.objects.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn insert(&self, id: ObjectId, bytes: Vec<u8>) -> Result<(), NetError> {
        let mut map = self.lock();
        if map.contains_key(&id) {
            return Err(NetError::DuplicateObject(id.to_string()));
        }
        map.insert(id, bytes);
        Ok(())
    }

    /// Returns the payload, removing it in the same critical section when `delete` is set.
    pub fn fetch(&self, id: ObjectId, delete: bool) -> Result<Vec<u8>, NetError> {
        let mut map = self.lock();
        let found = if delete {
            map.remove(&id)
        } else {
            map.get(&id).cloned()
        };
        found.ok_or_else(|| NetError::ObjectNotFound(id.to_string()))
    }

    pub fn remove(&self, id: ObjectId) -> Result<(), NetError> {
        self.lock()
            .remove(&id)
            .map(|_| ())
            .ok_or_else(|| NetError::ObjectNotFound(id.to_string()))
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        self.lock().contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<ObjectId> {
        let mut ids: Vec<_> = self.lock().keys().copied().collect();
        ids.sort();
        ids
    }
}
