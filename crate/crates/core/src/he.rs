//! Additively homomorphic encryption over real vectors.
//!
//! Paillier scheme with `g = n + 1`: keys come from two large primes,
//! `Enc(m) = g^m * r^n mod n^2`, `Dec` uses `L(x) = (x - 1)/n` and the
//! Carmichael-function inverse. Real vectors pass through a fixed-point
//! codec (`round(v * 2^f)`, two's-complement embedding into the plaintext
//! space), so summing ciphertexts sums the underlying reals.
//!
//! The aggregation contract keeps the server blind: [`aggregate`] takes
//! ciphertexts only — there is no way to hand it a [`SecretKey`].
//!
//! Encryption randomizers are sampled as `r = 2^x mod n` with a short
//! random exponent, so `r^n` is computed as `(2^n)^x mod n^2` against the
//! precomputed base; this keeps ciphertexts in the textbook form while
//! avoiding a full `n`-sized exponentiation per component.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Vec64;

/// Bit length of encryption randomizer exponents.
const RANDOMIZER_EXP_BITS: u64 = 448;

/// Scheme and codec parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeParams {
    pub modulus_bits: usize,
    pub frac_bits: u32,
    /// Largest number of clients a single aggregation may combine.
    pub max_clients: usize,
    /// Bound on the magnitude of encodable vector components.
    pub max_abs_value: f64,
    /// Largest integer client weight applied before encryption.
    pub max_weight: u64,
}

impl Default for HeParams {
    fn default() -> Self {
        Self {
            modulus_bits: 2048,
            frac_bits: 32,
            max_clients: 16,
            max_abs_value: 8.0,
            max_weight: 1_000_000,
        }
    }
}

impl HeParams {
    /// Checks that a worst-case aggregation cannot wrap the plaintext
    /// space: `2^f * max_abs * max_clients * max_weight < n / 2`.
    pub fn validate(&self) -> Result<()> {
        if self.modulus_bits < 512 {
            return Err(Error::Config(format!(
                "modulus_bits must be >= 512, got {}",
                self.modulus_bits
            )));
        }
        if self.frac_bits == 0 || self.frac_bits > 52 {
            return Err(Error::Config(format!(
                "frac_bits must lie in [1, 52], got {}",
                self.frac_bits
            )));
        }
        if !(self.max_abs_value > 0.0) || !self.max_abs_value.is_finite() {
            return Err(Error::Config(format!(
                "max_abs_value must be a positive finite real, got {}",
                self.max_abs_value
            )));
        }
        if self.max_clients == 0 || self.max_weight == 0 {
            return Err(Error::Config(
                "max_clients and max_weight must be >= 1".into(),
            ));
        }
        // bit budget of the worst-case aggregated plaintext, against the
        // smallest modulus keygen can produce (top bit set)
        let abs_bits = self.max_abs_value.log2().ceil().max(0.0) as usize + 1;
        let client_bits = (usize::BITS - self.max_clients.leading_zeros()) as usize;
        let weight_bits = (64 - self.max_weight.leading_zeros()) as usize;
        let worst_bits = self.frac_bits as usize + abs_bits + client_bits + weight_bits + 1;
        if worst_bits >= self.modulus_bits - 1 {
            return Err(Error::Config(format!(
                "parameters allow plaintext wraparound: worst-case sum needs \
                 {worst_bits} bits but the plaintext space guarantees only {}",
                self.modulus_bits - 1
            )));
        }
        Ok(())
    }

    pub fn codec(&self) -> FixedPointCodec {
        FixedPointCodec {
            frac_bits: self.frac_bits,
            max_abs_value: self.max_abs_value,
        }
    }
}

/// Maps reals to scaled integers: `encode(v) = round(v * 2^f)`, so
/// `decode(encode(v))` is within `2^(-f-1)` of `v` for in-range inputs.
#[derive(Debug, Clone, Copy)]
pub struct FixedPointCodec {
    frac_bits: u32,
    max_abs_value: f64,
}

impl FixedPointCodec {
    pub fn new(frac_bits: u32, max_abs_value: f64) -> Self {
        Self {
            frac_bits,
            max_abs_value,
        }
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn max_abs_value(&self) -> f64 {
        self.max_abs_value
    }

    /// Encodes a vector, rejecting out-of-range components by index.
    pub fn encode(&self, v: &Vec64) -> Result<Vec<i64>> {
        let scale = (self.frac_bits as f64).exp2();
        v.as_slice()
            .iter()
            .enumerate()
            .map(|(index, &value)| {
                if value.abs() > self.max_abs_value {
                    Err(Error::Overflow {
                        index,
                        value,
                        bound: self.max_abs_value,
                    })
                } else {
                    Ok((value * scale).round() as i64)
                }
            })
            .collect()
    }

    /// Inverse of [`encode`](Self::encode) extended to aggregated sums.
    pub fn decode(&self, iv: &[BigInt]) -> Vec64 {
        let scale = (self.frac_bits as f64).exp2();
        let data = iv
            .iter()
            .map(|m| m.to_f64().unwrap_or(f64::NAN) / scale)
            .collect();
        Vec64::new(data).expect("decoded aggregate overflows f64")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_sq: BigUint,
    g: BigUint,
    /// `2^n mod n^2`, the fixed randomizer base.
    rand_base: BigUint,
}

impl PublicKey {
    fn from_modulus(n: BigUint) -> Self {
        let n_sq = &n * &n;
        let g = &n + 1u8;
        let rand_base = BigUint::from(2u8).modpow(&n, &n_sq);
        Self {
            n,
            n_sq,
            g,
            rand_base,
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    n: BigUint,
    n_sq: BigUint,
}

/// Componentwise ciphertext vector. Carries the public ciphertext modulus
/// so that aggregation needs no key material at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextVec {
    cts: Vec<BigUint>,
    n_sq: BigUint,
}

impl CiphertextVec {
    pub fn len(&self) -> usize {
        self.cts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cts.is_empty()
    }

    pub fn ciphertexts(&self) -> &[BigUint] {
        &self.cts
    }
}

fn small_primes(limit: usize) -> Vec<u64> {
    let mut sieve = vec![true; limit];
    let mut out = Vec::new();
    for i in 2..limit {
        if sieve[i] {
            out.push(i as u64);
            let mut j = i * i;
            while j < limit {
                sieve[j] = false;
                j += i;
            }
        }
    }
    out
}

fn miller_rabin<R: Rng>(candidate: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let one = BigUint::one();
    let two = &one + &one;
    let n_minus_one = candidate - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, candidate);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, candidate);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn gen_prime<R: Rng>(bits: u64, rng: &mut R, sieve: &[u64]) -> Result<BigUint> {
    // top two bits set so the product of two primes has full width
    let top = (BigUint::one() << (bits - 1)) | (BigUint::one() << (bits - 2));
    for _ in 0..100_000 {
        let mut c = rng.gen_biguint(bits) | &top;
        c.set_bit(0, true);
        if sieve
            .iter()
            .any(|&p| (&c % p).is_zero() && c != BigUint::from(p))
        {
            continue;
        }
        if miller_rabin(&c, 2, rng) && miller_rabin(&c, 38, rng) {
            return Ok(c);
        }
    }
    Err(Error::Crypto(format!(
        "no {bits}-bit prime found within retry budget"
    )))
}

fn modinv(a: &BigUint, m: &BigUint) -> Result<BigUint> {
    let e = BigInt::from(a.clone()).extended_gcd(&BigInt::from(m.clone()));
    if !e.gcd.is_one() {
        return Err(Error::Crypto("value not invertible mod n".into()));
    }
    let mut x = e.x % BigInt::from(m.clone());
    if x.is_negative() {
        x += BigInt::from(m.clone());
    }
    Ok(x.to_biguint().expect("non-negative after reduction"))
}

/// `L(x) = (x - 1) / n`; exact for valid decryption intermediates.
fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u8) / n
}

/// Deterministic key generation from a seed. Two `modulus_bits/2`-bit
/// primes; `lambda = lcm(p-1, q-1)`, `mu = lambda^-1 mod n`.
pub fn keygen<R: Rng>(params: &HeParams, rng: &mut R) -> Result<(PublicKey, SecretKey)> {
    params.validate()?;
    let sieve = small_primes(2000);
    let half = (params.modulus_bits / 2) as u64;
    let p = gen_prime(half, rng, &sieve)?;
    let q = loop {
        let q = gen_prime(half, rng, &sieve)?;
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    let p1 = &p - 1u8;
    let q1 = &q - 1u8;
    let lambda = (&p1 * &q1) / p1.gcd(&q1);
    let mu = modinv(&lambda, &n)?;
    let pk = PublicKey::from_modulus(n.clone());
    let n_sq = pk.n_sq.clone();
    Ok((
        pk,
        SecretKey {
            lambda,
            mu,
            n,
            n_sq,
        },
    ))
}

/// Embeds a signed plaintext into `[0, n)`.
fn embed_signed(m: &BigInt, n: &BigUint) -> BigUint {
    let n_int = BigInt::from(n.clone());
    let mut r = m % &n_int;
    if r.is_negative() {
        r += &n_int;
    }
    r.to_biguint().expect("non-negative after embedding")
}

/// Recovers a signed value from the centered plaintext space.
fn center_signed(m: BigUint, n: &BigUint) -> BigInt {
    if &m * 2u8 > *n {
        BigInt::from(m) - BigInt::from(n.clone())
    } else {
        BigInt::from(m)
    }
}

fn encrypt_integer<R: Rng>(pk: &PublicKey, m: &BigInt, rng: &mut R) -> BigUint {
    let m_embedded = embed_signed(m, &pk.n);
    // (1 + n)^m = 1 + m*n mod n^2
    let gm = (BigUint::one() + m_embedded * &pk.n) % &pk.n_sq;
    let exp = loop {
        let x = rng.gen_biguint(RANDOMIZER_EXP_BITS);
        if !x.is_zero() {
            break x;
        }
    };
    let randomizer = pk.rand_base.modpow(&exp, &pk.n_sq);
    (gm * randomizer) % &pk.n_sq
}

fn decrypt_integer(sk: &SecretKey, ct: &BigUint) -> BigInt {
    let x = ct.modpow(&sk.lambda, &sk.n_sq);
    let m = (l_function(&x, &sk.n) * &sk.mu) % &sk.n;
    center_signed(m, &sk.n)
}

/// Encrypts a client update pre-scaled by its integer weight:
/// componentwise `Enc(encode(update_i) * int_weight)`.
///
/// The whole vector is validated before any ciphertext is produced.
pub fn encrypt_update<R: Rng>(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    update: &Vec64,
    int_weight: u64,
    rng: &mut R,
) -> Result<CiphertextVec> {
    if int_weight == 0 {
        return Err(Error::Config("client weight must be >= 1".into()));
    }
    let encoded = codec.encode(update)?;
    let weight = BigInt::from(int_weight);
    let cts = encoded
        .iter()
        .map(|&m| encrypt_integer(pk, &(BigInt::from(m) * &weight), rng))
        .collect();
    Ok(CiphertextVec {
        cts,
        n_sq: pk.n_sq.clone(),
    })
}

/// Homomorphic sum of encrypted updates: componentwise ciphertext
/// multiplication. Takes no key, by construction.
pub fn aggregate(ciphers: &[CiphertextVec]) -> Result<CiphertextVec> {
    let first = ciphers
        .first()
        .ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    for c in ciphers.iter().skip(1) {
        if c.len() != first.len() {
            return Err(Error::Dimension {
                op: "aggregate",
                left: first.len(),
                right: c.len(),
            });
        }
        if c.n_sq != first.n_sq {
            return Err(Error::Crypto(
                "ciphertexts under different moduli cannot be aggregated".into(),
            ));
        }
    }
    let mut acc = first.cts.clone();
    for c in ciphers.iter().skip(1) {
        for (slot, ct) in acc.iter_mut().zip(&c.cts) {
            *slot = (&*slot * ct) % &first.n_sq;
        }
    }
    Ok(CiphertextVec {
        cts: acc,
        n_sq: first.n_sq.clone(),
    })
}

/// Decrypts an aggregate and divides by the total weight `N`, yielding the
/// weighted mean of the clients' updates.
pub fn decrypt_aggregate(
    sk: &SecretKey,
    codec: &FixedPointCodec,
    agg: &CiphertextVec,
    total_weight: u64,
) -> Result<Vec64> {
    if total_weight == 0 {
        return Err(Error::Config("total weight must be >= 1".into()));
    }
    if agg.n_sq != sk.n_sq {
        return Err(Error::Crypto("aggregate does not match this key".into()));
    }
    let plain: Vec<BigInt> = agg.cts.iter().map(|ct| decrypt_integer(sk, ct)).collect();
    let sum = codec.decode(&plain);
    Vec64::new(
        sum.as_slice()
            .iter()
            .map(|v| v / total_weight as f64)
            .collect(),
    )
}

#[derive(Serialize, Deserialize)]
struct PublicKeyWire {
    n: String,
    g: String,
}

#[derive(Serialize, Deserialize)]
struct SecretKeyWire {
    lambda: String,
    mu: String,
}

pub fn save_public_key(path: &Path, pk: &PublicKey) -> Result<()> {
    let wire = PublicKeyWire {
        n: pk.n.to_str_radix(16),
        g: pk.g.to_str_radix(16),
    };
    io::write_text(path, &serde_json::to_string(&wire).expect("key serializes"))
}

fn parse_hex(path: &Path, field: &str, s: &str) -> Result<BigUint> {
    BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        detail: format!("field {field} is not valid hex"),
    })
}

pub fn load_public_key(path: &Path) -> Result<PublicKey> {
    let text = io::read_text(path)?;
    let wire: PublicKeyWire = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        detail: e.to_string(),
    })?;
    let n = parse_hex(path, "n", &wire.n)?;
    let g = parse_hex(path, "g", &wire.g)?;
    if g != &n + 1u8 {
        return Err(Error::Crypto(
            "unsupported generator: this scheme fixes g = n + 1".into(),
        ));
    }
    Ok(PublicKey::from_modulus(n))
}

pub fn save_secret_key(path: &Path, sk: &SecretKey) -> Result<()> {
    let wire = SecretKeyWire {
        lambda: sk.lambda.to_str_radix(16),
        mu: sk.mu.to_str_radix(16),
    };
    io::write_text(path, &serde_json::to_string(&wire).expect("key serializes"))
}

/// Loads a secret key; the public key supplies the modulus.
pub fn load_secret_key(path: &Path, pk: &PublicKey) -> Result<SecretKey> {
    let text = io::read_text(path)?;
    let wire: SecretKeyWire = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        detail: e.to_string(),
    })?;
    Ok(SecretKey {
        lambda: parse_hex(path, "lambda", &wire.lambda)?,
        mu: parse_hex(path, "mu", &wire.mu)?,
        n: pk.n.clone(),
        n_sq: pk.n_sq.clone(),
    })
}

/// One audit-transcript record: `{"client_id":..,"round":..,"ciphertexts":[hex]}`.
#[derive(Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub client_id: u64,
    pub round: usize,
    pub ciphertexts: Vec<String>,
}

impl TranscriptRecord {
    pub fn new(client_id: u64, round: usize, cv: &CiphertextVec) -> Self {
        Self {
            client_id,
            round,
            ciphertexts: cv.cts.iter().map(|c| c.to_str_radix(16)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::OnceLock;

    fn test_params() -> HeParams {
        HeParams {
            modulus_bits: 512,
            ..Default::default()
        }
    }

    /// 512-bit keypair shared across tests; keygen is the slow part.
    fn shared_keys() -> &'static (PublicKey, SecretKey) {
        static KEYS: OnceLock<(PublicKey, SecretKey)> = OnceLock::new();
        KEYS.get_or_init(|| {
            let mut rng = ChaCha20Rng::seed_from_u64(0xfeed);
            keygen(&test_params(), &mut rng).unwrap()
        })
    }

    fn vec64(data: &[f64]) -> Vec64 {
        Vec64::new(data.to_vec()).unwrap()
    }

    #[test]
    fn keygen_is_deterministic() {
        let params = test_params();
        let a = keygen(&params, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        let b = keygen(&params, &mut ChaCha20Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = keygen(&params, &mut ChaCha20Rng::seed_from_u64(6)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn integer_round_trip() {
        let (pk, sk) = shared_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(
            decrypt_integer(sk, &encrypt_integer(pk, &BigInt::from(0), &mut rng)),
            BigInt::from(0)
        );
        for _ in 0..100 {
            let m = BigInt::from(rng.gen_range(-(1i64 << 60)..(1i64 << 60)));
            let ct = encrypt_integer(pk, &m, &mut rng);
            assert_eq!(decrypt_integer(sk, &ct), m);
        }
    }

    #[test]
    fn additive_homomorphism_is_exact() {
        let (pk, sk) = shared_keys();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = BigInt::from(rng.gen_range(-(1i64 << 40)..(1i64 << 40)));
            let b = BigInt::from(rng.gen_range(-(1i64 << 40)..(1i64 << 40)));
            let ca = encrypt_integer(pk, &a, &mut rng);
            let cb = encrypt_integer(pk, &b, &mut rng);
            let sum = (ca * cb) % &pk.n_sq;
            assert_eq!(decrypt_integer(sk, &sum), a + b);
        }
    }

    #[test]
    fn codec_round_trip_bounds() {
        let codec = FixedPointCodec::new(32, 8.0);
        assert_eq!(codec.encode(&vec64(&[0.0])).unwrap(), vec![0]);
        assert_eq!(codec.encode(&vec64(&[1.0])).unwrap(), vec![1i64 << 32]);

        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let v = vec64(&(0..16).map(|_| rng.gen_range(-8.0..8.0)).collect::<Vec<_>>());
        let enc = codec.encode(&v).unwrap();
        let back = codec.decode(&enc.iter().map(|&x| BigInt::from(x)).collect::<Vec<_>>());
        for (a, b) in v.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() < (2.0f64).powi(-31));
        }

        match codec.encode(&vec64(&[0.0, 9.5])) {
            Err(Error::Overflow { index, value, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(value, 9.5);
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn encrypt_update_round_trips_with_weights() {
        let (pk, sk) = shared_keys();
        let codec = FixedPointCodec::new(32, 8.0);
        let mut rng = ChaCha20Rng::seed_from_u64(4);

        let zero = vec64(&[0.0, 0.0, 0.0]);
        let ct = encrypt_update(pk, &codec, &zero, 7, &mut rng).unwrap();
        let dec = decrypt_aggregate(sk, &codec, &ct, 7).unwrap();
        assert_eq!(dec.as_slice(), &[0.0, 0.0, 0.0]);

        let half = vec64(&[0.5]);
        let ct = encrypt_update(pk, &codec, &half, 1, &mut rng).unwrap();
        let dec = decrypt_aggregate(sk, &codec, &ct, 1).unwrap();
        assert!((dec.as_slice()[0] - 0.5).abs() < (2.0f64).powi(-31));

        // weight 3, divide by weight 1: plaintext scaling by the weight
        let ct = encrypt_update(pk, &codec, &half, 3, &mut rng).unwrap();
        let dec = decrypt_aggregate(sk, &codec, &ct, 1).unwrap();
        assert!((dec.as_slice()[0] - 1.5).abs() < (2.0f64).powi(-30));
    }

    #[test]
    fn aggregate_matches_plaintext_weighted_mean() {
        let (pk, sk) = shared_keys();
        let codec = FixedPointCodec::new(32, 8.0);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let weights = [100u64, 100, 100, 200, 200];
        let dim = 8;

        let updates: Vec<Vec64> = (0..weights.len())
            .map(|_| vec64(&(0..dim).map(|_| rng.gen_range(-8.0..8.0)).collect::<Vec<_>>()))
            .collect();
        let total: u64 = weights.iter().sum();

        let cts: Vec<CiphertextVec> = updates
            .iter()
            .zip(&weights)
            .map(|(u, &w)| encrypt_update(pk, &codec, u, w, &mut rng).unwrap())
            .collect();
        let agg = aggregate(&cts).unwrap();
        let dec = decrypt_aggregate(sk, &codec, &agg, total).unwrap();

        for i in 0..dim {
            let expected: f64 = updates
                .iter()
                .zip(&weights)
                .map(|(u, &w)| u.as_slice()[i] * w as f64)
                .sum::<f64>()
                / total as f64;
            assert!(
                (dec.as_slice()[i] - expected).abs() < 1e-6,
                "component {i}: {} vs {expected}",
                dec.as_slice()[i]
            );
        }
    }

    #[test]
    fn aggregate_of_one_is_identity_in_plaintext() {
        let (pk, sk) = shared_keys();
        let codec = FixedPointCodec::new(32, 8.0);
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let u = vec64(&[1.25, -3.5]);
        let ct = encrypt_update(pk, &codec, &u, 4, &mut rng).unwrap();
        let agg = aggregate(std::slice::from_ref(&ct)).unwrap();
        let dec = decrypt_aggregate(sk, &codec, &agg, 4).unwrap();
        for (a, b) in dec.as_slice().iter().zip(u.as_slice()) {
            assert!((a - b).abs() < (2.0f64).powi(-30));
        }
    }

    #[test]
    fn aggregate_rejects_mismatched_lengths() {
        let (pk, _) = shared_keys();
        let codec = FixedPointCodec::new(32, 8.0);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = encrypt_update(pk, &codec, &vec64(&[1.0]), 1, &mut rng).unwrap();
        let b = encrypt_update(pk, &codec, &vec64(&[1.0, 2.0]), 1, &mut rng).unwrap();
        assert!(matches!(
            aggregate(&[a, b]),
            Err(Error::Dimension { op: "aggregate", .. })
        ));
    }

    #[test]
    fn overflow_boundary_survives_max_load() {
        // every client at +/- max_abs_value with the largest weight
        let params = HeParams {
            modulus_bits: 512,
            max_clients: 4,
            max_weight: 1000,
            ..Default::default()
        };
        params.validate().unwrap();
        let (pk, sk) = shared_keys();
        let codec = params.codec();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let k = params.max_clients;
        let w = params.max_weight;
        for sign in [1.0, -1.0] {
            let cts: Vec<CiphertextVec> = (0..k)
                .map(|_| {
                    let v = vec64(&[sign * params.max_abs_value]);
                    encrypt_update(pk, &codec, &v, w, &mut rng).unwrap()
                })
                .collect();
            let total = w * k as u64;
            let dec = decrypt_aggregate(sk, &codec, &aggregate(&cts).unwrap(), total).unwrap();
            assert!((dec.as_slice()[0] - sign * params.max_abs_value).abs() < 1e-6);
        }
    }

    #[test]
    fn params_validation_rejects_wraparound() {
        let p = HeParams {
            modulus_bits: 512,
            frac_bits: 52,
            max_clients: 1 << 20,
            max_abs_value: 1e120,
            max_weight: u64::MAX,
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn key_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (pk, sk) = shared_keys();

        let pk_path = dir.path().join("pk.json");
        save_public_key(&pk_path, pk).unwrap();
        let pk2 = load_public_key(&pk_path).unwrap();
        assert_eq!(pk, &pk2);

        let sk_path = dir.path().join("sk.json");
        save_secret_key(&sk_path, sk).unwrap();
        let sk2 = load_secret_key(&sk_path, &pk2).unwrap();
        assert_eq!(sk, &sk2);

        let text = std::fs::read_to_string(&pk_path).unwrap();
        assert!(text.starts_with("{\"n\":\""));
    }
}
