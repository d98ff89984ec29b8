//! Setup-phase ledger: Lamport-signed pseudonymous transactions, Merkle
//! roots, leading-zero-bit proof of work and chain validation.
//!
//! Blocks hash with a single SHA-256 over an 88-byte big-endian header. The
//! utility's population model is published as a [`TxKind::ModelWeights`]
//! transaction signed with a one-time key like any meter submission.

mod block;
mod chain;
mod lamport;

pub use block::{
    compute_merkle_root, hash_block, leading_zero_bits, merkle_root_of_leaves, mine, Block,
    BlockHeader, MeterTransaction, ReadingBatch, TxKind, BLOCK_VERSION, HEADER_LEN, MAX_DIFFICULTY,
};
pub use chain::{validate_chain, Chain, CHAIN_FORMAT_VERSION, CHAIN_MAGIC};
pub use lamport::{
    keygen, sha256, verify, Complement, Hash32, KeyDistributionCenter, LamportKeypair, PublicKey,
    Signature, PUBLIC_KEY_LEN, SIGNATURE_LEN,
};
