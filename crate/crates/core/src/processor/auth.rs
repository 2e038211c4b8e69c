//! User registry held by the enclave. The untrusted side only ever sees the
//! sealed blob.

use std::collections::BTreeMap;

use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use crate::crypto::{rnd_decrypt, rnd_encrypt, CipherKey};
use crate::error::{Error, Result};
use crate::package::{put_bytes, put_str, put_u32, Reader};

pub const TOKEN_LEN: usize = 32;

/// An authenticated caller. Only the registry and the processor create them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    user: String,
    operator: bool,
}

impl Session {
    pub(crate) fn operator() -> Self {
        Session { user: String::new(), operator: true }
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn is_operator(&self) -> bool {
        self.operator
    }

    /// Observation-bearing data is visible only to its owner.
    pub fn may_read(&self, observation: &str) -> Result<()> {
        if self.operator || self.user == observation {
            Ok(())
        } else {
            Err(Error::AuthorizationFailure { user: self.user.clone(), observation: observation.to_string() })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Registry {
    verifiers: BTreeMap<String, [u8; 32]>,
}

fn verifier(token: &[u8]) -> [u8; 32] {
    Sha256::digest(token).into()
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces `user` and returns the new token.
    pub fn register(&mut self, user: &str) -> Result<Vec<u8>> {
        if user.is_empty() {
            return Err(Error::Config("user name must be nonempty".into()));
        }
        let mut token = vec![0u8; TOKEN_LEN];
        rand::thread_rng().fill_bytes(&mut token);
        self.verifiers.insert(user.to_string(), verifier(&token));
        Ok(token)
    }

    pub fn contains(&self, user: &str) -> bool {
        self.verifiers.contains_key(user)
    }

    pub fn len(&self) -> usize {
        self.verifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verifiers.is_empty()
    }

    pub fn authenticate(&self, user: &str, token: &[u8]) -> Result<Session> {
        let fail = || Error::AuthFailure(user.to_string());
        let want = self.verifiers.get(user).ok_or_else(fail)?;
        if bool::from(verifier(token).ct_eq(want)) {
            Ok(Session { user: user.to_string(), operator: false })
        } else {
            Err(fail())
        }
    }

    pub fn seal(&self, key: &CipherKey) -> Vec<u8> {
        let mut plain = Vec::new();
        put_u32(&mut plain, self.verifiers.len() as u32);
        for (u, v) in &self.verifiers {
            put_str(&mut plain, u);
            put_bytes(&mut plain, v);
        }
        rnd_encrypt(key, &plain).bytes
    }

    pub fn open(blob: &[u8], key: &CipherKey) -> Result<Self> {
        let plain = rnd_decrypt(key, blob)?;
        let mut r = Reader::new(&plain);
        let n = r.u32()?;
        let mut verifiers = BTreeMap::new();
        for _ in 0..n {
            let u = r.string()?;
            let v: [u8; 32] =
                r.bytes()?.try_into().map_err(|_| Error::CorruptPackage("bad verifier length".into()))?;
            verifiers.insert(u, v);
        }
        if !r.is_empty() {
            return Err(Error::CorruptPackage("trailing registry bytes".into()));
        }
        Ok(Registry { verifiers })
    }
}
