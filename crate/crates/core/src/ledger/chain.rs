use std::collections::HashSet;

use super::block::{
    compute_merkle_root, leading_zero_bits, mine, Block, BlockHeader, MeterTransaction,
    BLOCK_VERSION, MAX_DIFFICULTY,
};
use super::lamport::Hash32;
use crate::bytes::{len_u32, put_u16, put_u32, Reader};
use crate::error::{Error, Result};

pub const CHAIN_MAGIC: &[u8; 4] = b"AMLC";
pub const CHAIN_FORMAT_VERSION: u16 = 1;

/// An append-only proof-of-work chain starting at a transaction-free genesis
/// block. Every pseudonym signs at most one transaction in the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    difficulty: u32,
    blocks: Vec<Block>,
}

impl Chain {
    pub fn new(difficulty: u32, genesis_timestamp: u64) -> Result<Self> {
        if difficulty > MAX_DIFFICULTY {
            return Err(Error::InvalidArgument(format!(
                "difficulty {difficulty} exceeds {MAX_DIFFICULTY}"
            )));
        }
        let mut header = BlockHeader {
            version: BLOCK_VERSION,
            prev_hash: [0; 32],
            merkle_root: [0; 32],
            timestamp: genesis_timestamp,
            difficulty,
            nonce: 0,
        };
        header.nonce = mine(&header, difficulty)?;
        Ok(Self { difficulty, blocks: vec![Block { header, transactions: Vec::new() }] })
    }

    pub fn difficulty(&self) -> u32 {
        self.difficulty
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Block count, genesis included.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip_hash(&self) -> Hash32 {
        self.blocks.last().expect("chain holds genesis").hash()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &MeterTransaction> {
        self.blocks.iter().flat_map(|b| &b.transactions)
    }

    /// Mean of `nonce + 1` over every block, genesis included.
    pub fn mean_mining_attempts(&self) -> f64 {
        let total: f64 = self.blocks.iter().map(|b| b.header.nonce as f64 + 1.0).sum();
        total / self.blocks.len() as f64
    }

    /// Verifies, mines and links a new block. On error the chain is unchanged.
    pub fn append_block(&mut self, transactions: Vec<MeterTransaction>, timestamp: u64) -> Result<&Block> {
        if transactions.is_empty() {
            return Err(Error::InvalidArgument("a block needs at least one transaction".into()));
        }
        let prev = &self.blocks.last().expect("chain holds genesis").header;
        if timestamp < prev.timestamp {
            return Err(Error::InvalidArgument(format!(
                "timestamp {timestamp} precedes tip timestamp {}",
                prev.timestamp
            )));
        }
        let mut seen: HashSet<Hash32> = self.transactions().map(|t| t.pseudonym).collect();
        for (i, tx) in transactions.iter().enumerate() {
            tx.check().map_err(|r| Error::RejectedTransaction(format!("transaction {i}: {r}")))?;
            if !seen.insert(tx.pseudonym) {
                return Err(Error::DoubleSubmission(hex::encode(tx.pseudonym)));
            }
        }
        let mut header = BlockHeader {
            version: BLOCK_VERSION,
            prev_hash: self.tip_hash(),
            merkle_root: compute_merkle_root(&transactions),
            timestamp,
            difficulty: self.difficulty,
            nonce: 0,
        };
        header.nonce = mine(&header, self.difficulty)?;
        self.blocks.push(Block { header, transactions });
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// `"AMLC" | version u16 | difficulty u32 | count u32 | (len u32, block)*
    /// | tip hash`. The trailing tip hash pins the last header.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHAIN_MAGIC.to_vec();
        put_u16(&mut out, CHAIN_FORMAT_VERSION);
        put_u32(&mut out, self.difficulty);
        put_u32(&mut out, len_u32(self.blocks.len()));
        for block in &self.blocks {
            let bytes = block.to_bytes();
            put_u32(&mut out, len_u32(bytes.len()));
            out.extend_from_slice(&bytes);
        }
        out.extend_from_slice(&self.tip_hash());
        out
    }

    /// Decodes and fully validates a serialized chain.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (chain, tip) = decode(bytes)?;
        validate_blocks(chain.difficulty, &chain.blocks, Some(&tip))?;
        Ok(chain)
    }
}

fn decode(bytes: &[u8]) -> Result<(Chain, Hash32)> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHAIN_MAGIC {
        return Err(Error::Codec("not a chain file (bad magic)".into()));
    }
    let version = r.u16()?;
    if version != CHAIN_FORMAT_VERSION {
        return Err(Error::Codec(format!("unsupported chain format version {version}")));
    }
    let difficulty = r.u32()?;
    if difficulty > MAX_DIFFICULTY {
        return Err(Error::Codec(format!("difficulty {difficulty} exceeds {MAX_DIFFICULTY}")));
    }
    let count = r.u32()? as usize;
    let mut blocks = Vec::new();
    for index in 0..count {
        let block = r
            .u32()
            .and_then(|len| r.take(len as usize))
            .and_then(Block::from_bytes)
            .map_err(|e| Error::ChainInvalid { index, reason: e.to_string() })?;
        blocks.push(block);
    }
    let tip = r.array()?;
    r.finish()?;
    Ok((Chain { difficulty, blocks }, tip))
}

pub fn validate_chain(chain: &Chain) -> Result<()> {
    validate_blocks(chain.difficulty, &chain.blocks, None)
}

fn check_header(block: &Block, index: usize, difficulty: u32, prev: Option<(&Block, Hash32)>, hash: &Hash32) -> std::result::Result<(), String> {
    let h = &block.header;
    if h.version != BLOCK_VERSION {
        return Err(format!("unsupported block version {}", h.version));
    }
    if h.difficulty != difficulty {
        return Err(format!("block difficulty {} != chain difficulty {difficulty}", h.difficulty));
    }
    match prev {
        None => {
            if h.prev_hash != [0; 32] {
                return Err("genesis prev_hash is not zero".into());
            }
            if !block.transactions.is_empty() {
                return Err("genesis carries transactions".into());
            }
        }
        Some((p, p_hash)) => {
            if h.prev_hash != p_hash {
                return Err(format!("prev_hash does not match block {}", index - 1));
            }
            if h.timestamp < p.header.timestamp {
                return Err("timestamp precedes previous block".into());
            }
            if block.transactions.is_empty() {
                return Err("block carries no transactions".into());
            }
        }
    }
    if leading_zero_bits(hash) < difficulty {
        return Err(format!("proof of work below difficulty {difficulty}"));
    }
    Ok(())
}

/// Reports the lowest failing block index. Cheap header checks run over the
/// whole chain first so tampered chains are rejected without verifying every
/// signature; Merkle roots and then signatures are only checked below the
/// first header failure.
fn validate_blocks(difficulty: u32, blocks: &[Block], claimed_tip: Option<&Hash32>) -> Result<()> {
    if blocks.is_empty() {
        return Err(Error::ChainInvalid { index: 0, reason: "missing genesis block".into() });
    }
    let hashes: Vec<Hash32> = blocks.iter().map(Block::hash).collect();
    let mut failure: Option<(usize, String)> = None;

    for (i, block) in blocks.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| (&blocks[p], hashes[p]));
        if let Err(reason) = check_header(block, i, difficulty, prev, &hashes[i]) {
            failure = Some((i, reason));
            break;
        }
    }
    if failure.is_none() && claimed_tip.is_some_and(|t| t != hashes.last().expect("non-empty")) {
        failure = Some((blocks.len() - 1, "tip hash mismatch".into()));
    }

    let mut limit = failure.as_ref().map_or(blocks.len(), |f| f.0);
    if let Some(i) = (0..limit).find(|&i| compute_merkle_root(&blocks[i].transactions) != blocks[i].header.merkle_root) {
        failure = Some((i, "merkle root mismatch".into()));
        limit = i;
    }

    let mut seen = HashSet::new();
    'blocks: for (i, block) in blocks[..limit].iter().enumerate() {
        for (t, tx) in block.transactions.iter().enumerate() {
            let problem = match tx.check() {
                Err(r) => Some(format!("transaction {t}: {r}")),
                Ok(()) if !seen.insert(tx.pseudonym) => {
                    Some(format!("transaction {t}: pseudonym {} reused", hex::encode(tx.pseudonym)))
                }
                Ok(()) => None,
            };
            if let Some(reason) = problem {
                failure = Some((i, reason));
                break 'blocks;
            }
        }
    }

    match failure {
        Some((index, reason)) => Err(Error::ChainInvalid { index, reason }),
        None => Ok(()),
    }
}
