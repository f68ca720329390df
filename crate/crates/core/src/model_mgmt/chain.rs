use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use sha2::{Digest as _, Sha256};

use super::wire::{self, Reader};
use crate::error::{Error, Result};

pub type Digest = [u8; 32];

/// Parent digest of the first record in a chain.
pub const GENESIS_DIGEST: Digest = [0u8; 32];

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

/// A record body with a canonical byte encoding.
pub trait ChainBody: Sized {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(reader: &mut Reader<'_>) -> Result<Self>;
}

/// A body sealed into the chain: `record_digest = sha256(parent ‖ body)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sealed<B> {
    pub parent_digest: Digest,
    pub body: B,
    pub record_digest: Digest,
}

impl<B: ChainBody> Sealed<B> {
    pub fn seal(parent_digest: Digest, body: B) -> Self {
        let record_digest = Self::digest_of(&parent_digest, &body);
        Self { parent_digest, body, record_digest }
    }

    fn digest_of(parent: &Digest, body: &B) -> Digest {
        let mut bytes = parent.to_vec();
        body.encode(&mut bytes);
        sha256(&bytes)
    }

    pub fn is_self_consistent(&self) -> bool {
        Self::digest_of(&self.parent_digest, &self.body) == self.record_digest
    }

    /// `parent ‖ body ‖ record_digest`
    pub fn encode_record(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.parent_digest);
        self.body.encode(out);
        out.extend_from_slice(&self.record_digest);
    }

    pub fn decode_record(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let parent_digest = r.digest()?;
        let body = B::decode(&mut r)?;
        let record_digest = r.digest()?;
        r.finish()?;
        Ok(Self { parent_digest, body, record_digest })
    }
}

/// Append-only hash chain with a single writer and many readers.
///
/// Records are stored behind `Arc`s and the vector is only extended under
/// the write lock, so a reader's snapshot never contains a partial record.
pub struct HashChain<B> {
    records: RwLock<Vec<Arc<Sealed<B>>>>,
}

impl<B> Default for HashChain<B> {
    fn default() -> Self {
        Self { records: RwLock::new(Vec::new()) }
    }
}

impl<B: ChainBody> HashChain<B> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("chain lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn head_digest(&self) -> Digest {
        self.records
            .read()
            .expect("chain lock")
            .last()
            .map_or(GENESIS_DIGEST, |r| r.record_digest)
    }

    pub fn snapshot(&self) -> Vec<Arc<Sealed<B>>> {
        self.records.read().expect("chain lock").clone()
    }

    /// Append `body`, requiring `parent` to be the current head digest.
    pub fn append(&self, parent: Digest, body: B) -> Result<Arc<Sealed<B>>> {
        let mut records = self.records.write().expect("chain lock");
        let head = records.last().map_or(GENESIS_DIGEST, |r| r.record_digest);
        if parent != head {
            return Err(Error::ChainIntegrity {
                index: records.len(),
                reason: format!(
                    "parent digest {} does not match head {}",
                    hex::encode(parent),
                    hex::encode(head)
                ),
            });
        }
        let sealed = Arc::new(Sealed::seal(parent, body));
        records.push(Arc::clone(&sealed));
        Ok(sealed)
    }

    /// Append `body` onto whatever the head is.
    pub fn append_next(&self, body: B) -> Arc<Sealed<B>> {
        let mut records = self.records.write().expect("chain lock");
        let head = records.last().map_or(GENESIS_DIGEST, |r| r.record_digest);
        let sealed = Arc::new(Sealed::seal(head, body));
        records.push(Arc::clone(&sealed));
        sealed
    }

    pub fn verify(&self) -> Result<()> {
        verify_records(self.snapshot().iter().map(|r| r.as_ref()))
    }

    /// Length-prefixed (u32 LE) encoded records, in order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut buf = Vec::new();
        for record in self.snapshot() {
            buf.clear();
            record.encode_record(&mut buf);
            wire::put_u32(&mut out, buf.len() as u32);
            out.extend_from_slice(&buf);
        }
        out
    }

    /// Decode and verify a chain; errors carry the first bad record index.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let mut records: Vec<Arc<Sealed<B>>> = Vec::new();
        let mut head = GENESIS_DIGEST;
        while r.remaining() > 0 {
            let index = records.len();
            let corrupt = |e: Error| Error::ChainIntegrity { index, reason: e.to_string() };
            let len = r.u32().map_err(corrupt)? as usize;
            let raw = r.take(len).map_err(corrupt)?;
            let record = Sealed::<B>::decode_record(raw).map_err(corrupt)?;
            check_link(index, &head, &record)?;
            head = record.record_digest;
            records.push(Arc::new(record));
        }
        Ok(Self { records: RwLock::new(records) })
    }

    /// Write atomically (temp file then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::cli::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn check_link<B: ChainBody>(index: usize, head: &Digest, record: &Sealed<B>) -> Result<()> {
    if &record.parent_digest != head {
        return Err(Error::ChainIntegrity { index, reason: "parent digest mismatch".into() });
    }
    if !record.is_self_consistent() {
        return Err(Error::ChainIntegrity { index, reason: "record digest mismatch".into() });
    }
    Ok(())
}

pub fn verify_records<'a, B: ChainBody + 'a>(
    records: impl IntoIterator<Item = &'a Sealed<B>>,
) -> Result<()> {
    let mut head = GENESIS_DIGEST;
    for (index, record) in records.into_iter().enumerate() {
        check_link(index, &head, record)?;
        head = record.record_digest;
    }
    Ok(())
}
