use std::path::Path;
use std::sync::Arc;

use super::chain::{ChainBody, Digest, HashChain, Sealed};
use super::wire::{self, Reader};
use crate::error::{Error, Result};

/// One local model that fed a global version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contribution {
    pub client_id: String,
    pub local_version: u64,
    pub update_digest: Digest,
}

/// Which local models produced a global model version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoVersion {
    pub global_version: u64,
    pub global_model_digest: Digest,
    /// In submission order.
    pub contributing: Vec<Contribution>,
}

impl ChainBody for CoVersion {
    fn encode(&self, out: &mut Vec<u8>) {
        wire::put_u64(out, self.global_version);
        out.extend_from_slice(&self.global_model_digest);
        wire::put_u32(out, self.contributing.len() as u32);
        for c in &self.contributing {
            wire::put_str(out, &c.client_id);
            wire::put_u64(out, c.local_version);
            out.extend_from_slice(&c.update_digest);
        }
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let global_version = r.u64()?;
        let global_model_digest = r.digest()?;
        let n = r.u32()? as usize;
        // Each contribution takes at least 44 bytes; reject absurd counts
        // before allocating.
        if n > r.remaining() / 44 {
            return Err(Error::Decode(format!("contribution count {n} exceeds record size")));
        }
        let mut contributing = Vec::with_capacity(n);
        for _ in 0..n {
            contributing.push(Contribution {
                client_id: r.string()?,
                local_version: r.u64()?,
                update_digest: r.digest()?,
            });
        }
        Ok(Self { global_version, global_model_digest, contributing })
    }
}

pub type CoVersionRecord = Sealed<CoVersion>;

/// Append-only co-versioning registry backed by a hash chain.
#[derive(Default)]
pub struct CoVersionRegistry {
    chain: HashChain<CoVersion>,
}

impl CoVersionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn head_digest(&self) -> Digest {
        self.chain.head_digest()
    }

    /// Append the record for `global_version`. `parent` must be the digest
    /// of the previous record, or the genesis digest for the first one.
    pub fn record_co_version(
        &self,
        global_version: u64,
        global_model_digest: Digest,
        contributing: Vec<Contribution>,
        parent: Digest,
    ) -> Result<Arc<CoVersionRecord>> {
        if let Some(last) = self.chain.snapshot().last() {
            if global_version <= last.body.global_version {
                return Err(Error::Parameter(format!(
                    "global version {global_version} does not follow {}",
                    last.body.global_version
                )));
            }
        }
        self.chain.append(parent, CoVersion { global_version, global_model_digest, contributing })
    }

    pub fn records(&self) -> Vec<Arc<CoVersionRecord>> {
        self.chain.snapshot()
    }

    pub fn global_records(&self) -> usize {
        self.chain.len()
    }

    pub fn local_entries(&self) -> usize {
        self.chain.snapshot().iter().map(|r| r.body.contributing.len()).sum()
    }

    pub fn find(&self, global_version: u64) -> Result<Arc<CoVersionRecord>> {
        self.chain
            .snapshot()
            .into_iter()
            .find(|r| r.body.global_version == global_version)
            .ok_or_else(|| Error::NotFound(format!("version {global_version} not found")))
    }

    /// `(client_id, local_version)` pairs of `global_version`, in
    /// submission order.
    pub fn query_lineage(&self, global_version: u64) -> Result<Vec<(String, u64)>> {
        Ok(self
            .find(global_version)?
            .body
            .contributing
            .iter()
            .map(|c| (c.client_id.clone(), c.local_version))
            .collect())
    }

    pub fn contains_model(&self, digest: &Digest) -> bool {
        self.chain.snapshot().iter().any(|r| &r.body.global_model_digest == digest)
    }

    pub fn verify(&self) -> Result<()> {
        self.chain.verify()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.chain.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(Self { chain: HashChain::from_bytes(bytes)? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.chain.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self { chain: HashChain::load(path)? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_mgmt::{sha256, GENESIS_DIGEST};

    fn contribution(id: &str, v: u64) -> Contribution {
        Contribution {
            client_id: id.into(),
            local_version: v,
            update_digest: sha256(format!("{id}/{v}").as_bytes()),
        }
    }

    fn build(rounds: u64, clients: u64) -> CoVersionRegistry {
        let reg = CoVersionRegistry::new();
        for round in 1..=rounds {
            let contribs = (0..clients).map(|c| contribution(&format!("c{c:03}"), round)).collect();
            let parent = reg.head_digest();
            reg.record_co_version(round, sha256(&round.to_le_bytes()), contribs, parent).unwrap();
        }
        reg
    }

    #[test]
    fn genesis_record_with_no_contributors_is_valid() {
        let reg = CoVersionRegistry::new();
        reg.record_co_version(0, [7; 32], vec![], GENESIS_DIGEST).unwrap();
        reg.verify().unwrap();
        assert_eq!(reg.global_records(), 1);
        assert!(reg.query_lineage(0).unwrap().is_empty());
    }

    #[test]
    fn lineage_returns_contributors_in_submission_order() {
        let reg = CoVersionRegistry::new();
        reg.record_co_version(1, [1; 32], vec![contribution("B", 4), contribution("A", 2)], GENESIS_DIGEST)
            .unwrap();
        assert_eq!(reg.query_lineage(1).unwrap(), vec![("B".into(), 4), ("A".into(), 2)]);
        assert!(matches!(reg.query_lineage(9), Err(Error::NotFound(_))));
    }

    #[test]
    fn wrong_parent_is_a_chain_integrity_error() {
        let reg = build(3, 2);
        let err = reg.record_co_version(4, [0; 32], vec![], GENESIS_DIGEST).unwrap_err();
        assert!(matches!(err, Error::ChainIntegrity { index: 3, .. }));
    }

    #[test]
    fn hundred_rounds_of_hundred_clients() {
        let reg = build(100, 100);
        assert_eq!(reg.global_records(), 100);
        assert_eq!(reg.local_entries(), 10_000);
        reg.verify().unwrap();
    }

    #[test]
    fn flipping_any_byte_of_record_37_fails_there() {
        let reg = build(50, 3);
        let bytes = reg.to_bytes();
        // Record offsets from the length prefixes.
        let mut offsets = Vec::new();
        let mut pos = 0;
        while pos < bytes.len() {
            let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
            offsets.push((pos, pos + 4 + len));
            pos += 4 + len;
        }
        let (start, end) = offsets[37];
        for at in start..end {
            let mut bad = bytes.clone();
            bad[at] ^= 0x10;
            match CoVersionRegistry::from_bytes(&bad) {
                Err(Error::ChainIntegrity { index, .. }) => assert_eq!(index, 37, "byte {at}"),
                Err(other) => panic!("byte {at}: unexpected {other}"),
                Ok(_) => panic!("byte {at}: tampering undetected"),
            }
        }
    }
}
