//! Key derivation, DET/RND authenticated encryption, the public grid hash and
//! chain hashing. Nothing outside this module touches raw key bytes.

use aes_siv::aead::generic_array::GenericArray;
use aes_siv::siv::Aes256Siv;
use aes_siv::KeyInit;
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};

pub type EpochId = u64;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 16;
/// Byte appended by AES-SIV to every ciphertext.
pub const TAG_LEN: usize = 16;
pub const SEPARATOR: u8 = 0xFF;
/// Reserved value in the cid position of a fake tuple's index plaintext.
pub const FAKE_MARKER: u64 = u64::MAX;

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, PartialEq, Eq)]
pub struct MasterSecret([u8; KEY_LEN]);

impl MasterSecret {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; KEY_LEN];
        rng.fill_bytes(&mut b);
        MasterSecret(b)
    }

    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        MasterSecret(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| {
            Error::Config(format!("master secret must be {KEY_LEN} bytes, got {}", bytes.len()))
        })?;
        Ok(MasterSecret(arr))
    }

    pub fn expose(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    fn prf(&self, input: &[u8]) -> [u8; KEY_LEN] {
        let mut mac = <HmacSha256 as Mac>::new_from_slice(&self.0).expect("hmac accepts any key length");
        mac.update(input);
        mac.finalize().into_bytes().into()
    }
}

impl fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterSecret(..)")
    }
}

/// A 32-byte key plus the two SIV subkeys expanded from it.
#[derive(Clone)]
pub struct CipherKey {
    bytes: [u8; KEY_LEN],
    det: [u8; 64],
    rnd: [u8; 64],
}

impl CipherKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        let hk = Hkdf::<Sha256>::from_prk(&bytes).expect("32-byte prk");
        let mut det = [0u8; 64];
        let mut rnd = [0u8; 64];
        hk.expand(b"det", &mut det).expect("64 bytes is a valid hkdf length");
        hk.expand(b"rnd", &mut rnd).expect("64 bytes is a valid hkdf length");
        CipherKey { bytes, det, rnd }
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    fn det_cipher(&self) -> Aes256Siv {
        Aes256Siv::new(GenericArray::from_slice(&self.det))
    }

    fn rnd_cipher(&self) -> Aes256Siv {
        Aes256Siv::new(GenericArray::from_slice(&self.rnd))
    }
}

impl PartialEq for CipherKey {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}

impl Eq for CipherKey {}

impl fmt::Debug for CipherKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CipherKey(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochKey {
    key: CipherKey,
    pub epoch: EpochId,
    pub rewrite_counter: u64,
}

impl Deref for EpochKey {
    type Target = CipherKey;

    fn deref(&self) -> &CipherKey {
        &self.key
    }
}

pub fn derive_epoch_key(master: &MasterSecret, eid: EpochId, rewrite_counter: u64) -> EpochKey {
    let bytes = master.prf(&encode_u64s(&[eid, rewrite_counter]));
    EpochKey { key: CipherKey::from_bytes(bytes), epoch: eid, rewrite_counter }
}

/// Key for non-epoch material (registry, sealed enclave state), separated by label.
pub fn derive_labeled_key(master: &MasterSecret, label: &str) -> CipherKey {
    let mut input = b"label".to_vec();
    input.push(SEPARATOR);
    input.extend_from_slice(label.as_bytes());
    CipherKey::from_bytes(master.prf(&input))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Det,
    Rnd,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub mode: Mode,
    pub bytes: Vec<u8>,
}

impl Ciphertext {
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

impl AsRef<[u8]> for Ciphertext {
    fn as_ref(&self) -> &[u8] {
        &self.bytes
    }
}

pub fn det_encrypt(key: &CipherKey, plaintext: &[u8]) -> Ciphertext {
    let no_headers: [&[u8]; 0] = [];
    let bytes = key
        .det_cipher()
        .encrypt(no_headers, plaintext)
        .expect("siv encryption is infallible for in-memory buffers");
    Ciphertext { mode: Mode::Det, bytes }
}

pub fn det_decrypt(key: &CipherKey, ct: &[u8]) -> Result<Vec<u8>> {
    let no_headers: [&[u8]; 0] = [];
    key.det_cipher()
        .decrypt(no_headers, ct)
        .map_err(|_| Error::AuthenticationFailure)
}

pub fn rnd_encrypt(key: &CipherKey, plaintext: &[u8]) -> Ciphertext {
    let mut nonce = [0u8; NONCE_LEN];
    rand::thread_rng().fill_bytes(&mut nonce);
    let sealed = key
        .rnd_cipher()
        .encrypt([&nonce[..]], plaintext)
        .expect("siv encryption is infallible for in-memory buffers");
    let mut bytes = Vec::with_capacity(NONCE_LEN + sealed.len());
    bytes.extend_from_slice(&nonce);
    bytes.extend_from_slice(&sealed);
    Ciphertext { mode: Mode::Rnd, bytes }
}

pub fn rnd_decrypt(key: &CipherKey, ct: &[u8]) -> Result<Vec<u8>> {
    if ct.len() < NONCE_LEN + TAG_LEN {
        return Err(Error::AuthenticationFailure);
    }
    let (nonce, sealed) = ct.split_at(NONCE_LEN);
    key.rnd_cipher()
        .decrypt([nonce], sealed)
        .map_err(|_| Error::AuthenticationFailure)
}

/// Fixed-width big-endian u64 fields joined by [`SEPARATOR`].
pub fn encode_u64s(fields: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.len() * 9);
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(SEPARATOR);
        }
        out.extend_from_slice(&f.to_be_bytes());
    }
    out
}

pub fn decode_u64s(bytes: &[u8]) -> Option<Vec<u64>> {
    if bytes.is_empty() || (bytes.len() + 1) % 9 != 0 {
        return None;
    }
    let mut out = Vec::with_capacity((bytes.len() + 1) / 9);
    for chunk in bytes.chunks(9) {
        let v = u64::from_be_bytes(chunk[..8].try_into().ok()?);
        if chunk.len() == 9 && chunk[8] != SEPARATOR {
            return None;
        }
        out.push(v);
    }
    Some(out)
}

/// Plaintext of a real row's index key.
pub fn index_plaintext(cid: u64, counter: u64) -> Vec<u8> {
    encode_u64s(&[cid, counter])
}

/// Plaintext of the j-th fake row's index key.
pub fn fake_index_plaintext(j: u64) -> Vec<u8> {
    encode_u64s(&[FAKE_MARKER, j])
}

/// `[u16 len][data][zero fill]`, `width` bytes in total.
pub fn pad(data: &[u8], width: usize) -> Result<Vec<u8>> {
    let max = width.saturating_sub(2).min(u16::MAX as usize);
    if data.len() > max {
        return Err(Error::ValueTooLong { len: data.len(), width });
    }
    let mut out = Vec::with_capacity(width);
    out.extend_from_slice(&(data.len() as u16).to_be_bytes());
    out.extend_from_slice(data);
    out.resize(width, 0);
    Ok(out)
}

pub fn unpad(padded: &[u8]) -> Option<&[u8]> {
    if padded.len() < 2 {
        return None;
    }
    let len = u16::from_be_bytes([padded[0], padded[1]]) as usize;
    padded.get(2..2 + len)
}

/// The public hash that places values on the grid. Unkeyed so that the data
/// provider and the enclave agree without interaction.
pub fn grid_hash(value: &[u8], modulus: u64) -> u64 {
    assert!(modulus >= 1, "grid_hash modulus must be positive");
    let mut h = Sha256::new();
    h.update(b"grid");
    h.update([SEPARATOR]);
    h.update(value);
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().unwrap()) % modulus
}

pub const DIGEST_LEN: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainDigest(pub [u8; DIGEST_LEN]);

impl ChainDigest {
    /// Digest of the empty sequence: H("").
    pub fn empty() -> Self {
        ChainDigest(Sha256::digest([]).into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl fmt::Debug for ChainDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainDigest(")?;
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

/// `H(ct ‖ prev)`; a missing `prev` contributes zero bytes.
pub fn chain_extend(prev: Option<&ChainDigest>, ct: &[u8]) -> ChainDigest {
    let mut h = Sha256::new();
    h.update(ct);
    if let Some(p) = prev {
        h.update(p.0);
    }
    ChainDigest(h.finalize().into())
}

pub fn chain_over<'a, I>(cts: I) -> ChainDigest
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut acc: Option<ChainDigest> = None;
    for ct in cts {
        acc = Some(chain_extend(acc.as_ref(), ct));
    }
    acc.unwrap_or_else(ChainDigest::empty)
}

/// Constant-time digest comparison.
pub fn digest_eq(a: &ChainDigest, b: &ChainDigest) -> bool {
    use subtle::ConstantTimeEq;
    a.0.ct_eq(&b.0).into()
}
