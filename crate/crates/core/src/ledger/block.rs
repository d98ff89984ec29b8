use serde::{Deserialize, Serialize};

use super::lamport::{sha256, Complement, Hash32, LamportKeypair, PublicKey, Signature, SIGNATURE_LEN};
use crate::bytes::{len_u32, put_f64s, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::neural;

pub const BLOCK_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 88;
pub const MAX_DIFFICULTY: u32 = 32;

/// Window energies a meter reports for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingBatch {
    pub epoch: u32,
    pub energies_wh: Vec<f64>,
}

impl ReadingBatch {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.energies_wh.len());
        put_u32(&mut out, self.epoch);
        put_u32(&mut out, len_u32(self.energies_wh.len()));
        put_f64s(&mut out, &self.energies_wh);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let epoch = r.u32()?;
        let count = r.u32()? as usize;
        let energies_wh = r.f64s(count)?;
        r.finish()?;
        if let Some(bad) = energies_wh.iter().find(|e| !e.is_finite() || **e < 0.0) {
            return Err(Error::Codec(format!("energy {bad} is not a non-negative number")));
        }
        Ok(Self { epoch, energies_wh })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TxKind {
    Readings = 0,
    /// Population-model weights published by the utility.
    ModelWeights = 1,
}

impl TxKind {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::Readings),
            1 => Ok(Self::ModelWeights),
            other => Err(Error::Codec(format!("unknown transaction kind {other}"))),
        }
    }
}

/// A pseudonymous signed submission. The pseudonym is the fingerprint of the
/// one-time public key; the key itself is not stored but rebuilt from the
/// signature and the unrevealed digests, so anyone can verify.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterTransaction {
    pub kind: TxKind,
    pub pseudonym: Hash32,
    pub payload: Vec<u8>,
    pub signature: Signature,
    pub complement: Complement,
}

const TX_FIXED_LEN: usize = 1 + 32 + 4 + 2 * SIGNATURE_LEN;

impl MeterTransaction {
    pub fn signed(kind: TxKind, key: &mut LamportKeypair, payload: Vec<u8>) -> Result<Self> {
        if payload.is_empty() {
            return Err(Error::InvalidArgument("transaction payload must not be empty".into()));
        }
        let signature = key.sign(&payload)?;
        Ok(Self {
            kind,
            pseudonym: key.public().fingerprint(),
            complement: key.public().complement(&payload),
            payload,
            signature,
        })
    }

    pub fn readings(key: &mut LamportKeypair, batch: &ReadingBatch) -> Result<Self> {
        Self::signed(TxKind::Readings, key, batch.to_bytes())
    }

    /// Checks everything a verifier can check without chain context.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.payload.is_empty() {
            return Err("empty payload".into());
        }
        let key = PublicKey::recover(&self.payload, &self.signature, &self.complement);
        if key.fingerprint() != self.pseudonym {
            return Err("signature does not verify under the pseudonym's key".into());
        }
        match self.kind {
            TxKind::Readings => ReadingBatch::from_bytes(&self.payload).map(drop),
            TxKind::ModelWeights => neural::peek_kind(&self.payload).map(drop),
        }
        .map_err(|e| format!("malformed payload: {e}"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TX_FIXED_LEN + self.payload.len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.pseudonym);
        put_u32(&mut out, len_u32(self.payload.len()));
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.signature.to_bytes());
        out.extend_from_slice(&self.complement.to_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let kind = TxKind::from_code(r.u8()?)?;
        let pseudonym = r.array()?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        let signature = Signature::from_bytes(r.take(SIGNATURE_LEN)?)?;
        let complement = Complement::from_bytes(r.take(SIGNATURE_LEN)?)?;
        r.finish()?;
        Ok(Self { kind, pseudonym, payload, signature, complement })
    }

    pub fn leaf_hash(&self) -> Hash32 {
        sha256(&self.to_bytes())
    }
}

/// Leaves are transaction digests; odd levels repeat their last node.
pub fn merkle_root_of_leaves(leaves: &[Hash32]) -> Hash32 {
    if leaves.is_empty() {
        return [0; 32];
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                sha256(&[pair[0], *right].concat())
            })
            .collect();
    }
    level[0]
}

pub fn compute_merkle_root(transactions: &[MeterTransaction]) -> Hash32 {
    let leaves: Vec<Hash32> = transactions.iter().map(MeterTransaction::leaf_hash).collect();
    merkle_root_of_leaves(&leaves)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub version: u32,
    pub prev_hash: Hash32,
    pub merkle_root: Hash32,
    pub timestamp: u64,
    pub difficulty: u32,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = Vec::with_capacity(HEADER_LEN);
        put_u32(&mut out, self.version);
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&self.merkle_root);
        put_u64(&mut out, self.timestamp);
        put_u32(&mut out, self.difficulty);
        put_u64(&mut out, self.nonce);
        out.try_into().expect("header is 88 bytes")
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            version: r.u32()?,
            prev_hash: r.array()?,
            merkle_root: r.array()?,
            timestamp: r.u64()?,
            difficulty: r.u32()?,
            nonce: r.u64()?,
        })
    }
}

pub fn hash_block(header: &BlockHeader) -> Hash32 {
    sha256(&header.to_bytes())
}

pub fn leading_zero_bits(hash: &Hash32) -> u32 {
    let mut bits = 0;
    for byte in hash {
        if *byte != 0 {
            return bits + byte.leading_zeros();
        }
        bits += 8;
    }
    bits
}

/// Lowest nonce, searching upward from 0, whose header hash has at least
/// `difficulty` leading zero bits. The header's own nonce is ignored.
pub fn mine(header: &BlockHeader, difficulty: u32) -> Result<u64> {
    if difficulty > MAX_DIFFICULTY {
        return Err(Error::InvalidArgument(format!(
            "difficulty {difficulty} exceeds {MAX_DIFFICULTY}"
        )));
    }
    let mut candidate = *header;
    for nonce in 0..=u64::MAX {
        candidate.nonce = nonce;
        if leading_zero_bits(&hash_block(&candidate)) >= difficulty {
            return Ok(nonce);
        }
    }
    Err(Error::MiningFailure(difficulty))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<MeterTransaction>,
}

impl Block {
    pub fn hash(&self) -> Hash32 {
        hash_block(&self.header)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes().to_vec();
        put_u32(&mut out, len_u32(self.transactions.len()));
        for tx in &self.transactions {
            let bytes = tx.to_bytes();
            put_u32(&mut out, len_u32(bytes.len()));
            out.extend_from_slice(&bytes);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let header = BlockHeader::read(&mut r)?;
        let count = r.u32()? as usize;
        // Every transaction costs more than its fixed part.
        if count > r.remaining() / TX_FIXED_LEN {
            return Err(Error::Codec(format!("{count} transactions cannot fit")));
        }
        let mut transactions = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            transactions.push(MeterTransaction::from_bytes(r.take(len)?)?);
        }
        r.finish()?;
        Ok(Self { header, transactions })
    }
}
