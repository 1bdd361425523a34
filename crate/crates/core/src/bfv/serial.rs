//! Binary encodings for keys and ciphertexts.
//!
//! Every object starts with a 4-byte tag and a version byte, then the
//! 64-bit parameter fingerprint, then length-prefixed residue vectors
//! (little-endian). Secret keys carry a distinct tag so that any stray copy
//! can be found by a byte scan.

use super::cipher::Ciphertext;
use super::keys::{KeySet, PublicKey, RelinKeys, SecretKey};
use super::rns::RnsPoly;
use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::modring::Domain;

pub const SECRET_KEY_TAG: &[u8; 4] = b"HESK";
/// Written right after every secret-key header. Long enough that a byte scan
/// for it has no realistic false positives in random ciphertext data.
pub const SECRET_KEY_MARKER: &[u8; 16] = b"HESK:secret-key:";
const PUBLIC_KEY_TAG: &[u8; 4] = b"HEPK";
const RELIN_KEY_TAG: &[u8; 4] = b"HERK";
const CIPHERTEXT_TAG: &[u8; 4] = b"HECT";
const KEYSET_TAG: &[u8; 4] = b"HEKS";
const VERSION: u8 = 1;

fn write_header(w: &mut ByteWriter, tag: &[u8; 4], params_id: u64) {
    w.raw(tag).u8(VERSION).u64(params_id);
}

fn read_header(r: &mut ByteReader<'_>, tag: &[u8; 4]) -> Result<u64> {
    let found = r.raw(4, "object tag")?;
    if found != tag {
        return Err(Error::Format(format!(
            "expected object tag {:?}, found {:?}",
            String::from_utf8_lossy(tag),
            String::from_utf8_lossy(found)
        )));
    }
    let v = r.u8("object version")?;
    if v != VERSION {
        return Err(Error::Version {
            found: v as u32,
            expected: VERSION as u32,
        });
    }
    r.u64("params id")
}

pub(crate) fn write_poly(w: &mut ByteWriter, p: &RnsPoly) {
    w.u8(match p.domain {
        Domain::Coefficient => 0,
        Domain::Evaluation => 1,
    });
    w.u32(p.residues.len() as u32);
    for r in &p.residues {
        w.u64s(r);
    }
}

pub(crate) fn read_poly(r: &mut ByteReader<'_>) -> Result<RnsPoly> {
    let domain = match r.u8("poly domain")? {
        0 => Domain::Coefficient,
        1 => Domain::Evaluation,
        d => return Err(Error::Format(format!("unknown poly domain {d}"))),
    };
    let k = r.u32("residue count")? as usize;
    let residues = (0..k)
        .map(|_| r.u64s("residues"))
        .collect::<Result<Vec<_>>>()?;
    if residues.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::Format("ragged residue vectors".into()));
    }
    Ok(RnsPoly { residues, domain })
}

impl Ciphertext {
    pub fn write(&self, w: &mut ByteWriter) {
        write_header(w, CIPHERTEXT_TAG, self.params_id);
        w.u32(self.polys.len() as u32);
        for p in &self.polys {
            write_poly(w, p);
        }
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let params_id = read_header(r, CIPHERTEXT_TAG)?;
        let size = r.u32("ciphertext size")? as usize;
        if size < 2 {
            return Err(Error::Format(format!("ciphertext size {size} < 2")));
        }
        let polys = (0..size).map(|_| read_poly(r)).collect::<Result<Vec<_>>>()?;
        Ok(Ciphertext { polys, params_id })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(b, "ciphertext");
        let ct = Self::read(&mut r)?;
        r.expect_end()?;
        Ok(ct)
    }
}

/// True if `bytes` contains a serialized secret key anywhere.
pub fn contains_secret_key(bytes: &[u8]) -> bool {
    bytes
        .windows(SECRET_KEY_MARKER.len())
        .any(|w| w == SECRET_KEY_MARKER)
}

impl SecretKey {
    pub fn write(&self, w: &mut ByteWriter) {
        write_header(w, SECRET_KEY_TAG, self.params_id);
        w.raw(SECRET_KEY_MARKER);
        write_poly(w, &self.poly);
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let params_id = read_header(r, SECRET_KEY_TAG)?;
        if r.raw(16, "secret key marker")? != SECRET_KEY_MARKER {
            return Err(Error::Format("secret key marker missing".into()));
        }
        Ok(SecretKey {
            poly: read_poly(r)?,
            params_id,
        })
    }
}

impl PublicKey {
    /// Identifies the key pair this public key belongs to.
    pub fn fingerprint(&self) -> u64 {
        let mut w = ByteWriter::new();
        self.write(&mut w);
        super::params::fnv1a(&w.finish())
    }

    pub fn write(&self, w: &mut ByteWriter) {
        write_header(w, PUBLIC_KEY_TAG, self.params_id);
        write_poly(w, &self.p0);
        write_poly(w, &self.p1);
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let params_id = read_header(r, PUBLIC_KEY_TAG)?;
        Ok(PublicKey {
            p0: read_poly(r)?,
            p1: read_poly(r)?,
            params_id,
        })
    }
}

impl RelinKeys {
    pub fn write(&self, w: &mut ByteWriter) {
        write_header(w, RELIN_KEY_TAG, self.params_id);
        w.u32(self.digit_bits).u32(self.keys.len() as u32);
        for (a, b) in &self.keys {
            write_poly(w, a);
            write_poly(w, b);
        }
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let params_id = read_header(r, RELIN_KEY_TAG)?;
        let digit_bits = r.u32("digit bits")?;
        let count = r.u32("relin key count")? as usize;
        let keys = (0..count)
            .map(|_| Ok((read_poly(r)?, read_poly(r)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(RelinKeys {
            keys,
            digit_bits,
            params_id,
        })
    }
}

impl KeySet {
    pub fn write(&self, w: &mut ByteWriter) {
        w.raw(KEYSET_TAG).u8(VERSION);
        self.secret_key.write(w);
        self.public_key.write(w);
        self.relin_keys.write(w);
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        if r.raw(4, "key set tag")? != KEYSET_TAG {
            return Err(Error::Format("not a key set".into()));
        }
        let v = r.u8("key set version")?;
        if v != VERSION {
            return Err(Error::Version {
                found: v as u32,
                expected: VERSION as u32,
            });
        }
        Ok(KeySet {
            secret_key: SecretKey::read(r)?,
            public_key: PublicKey::read(r)?,
            relin_keys: RelinKeys::read(r)?,
        })
    }
}
