//! Domain types shared by every phase of the pipeline.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use prodcarve_lang::ast::{FnDecl, TypeName};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed method id `{0}` (expected `container.Class.method/arity`)")]
    BadMethodId(String),
}

/// Fully-qualified method identifier: `container.Class.method/arity`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodId {
    pub container: String,
    pub class: String,
    pub method: String,
    pub arity: usize,
}

impl MethodId {
    pub fn new(container: &str, class: &str, method: &str, arity: usize) -> Self {
        MethodId { container: container.into(), class: class.into(), method: method.into(), arity }
    }

    /// File-system safe form used for per-method artifact names (`/` becomes `@`).
    pub fn file_stem(&self) -> String {
        format!("{}.{}.{}@{}", self.container, self.class, self.method, self.arity)
    }

    pub fn from_file_stem(stem: &str) -> Result<Self, ModelError> {
        stem.replacen('@', "/", 1).parse()
    }

    /// `Class.method`, the key the interpreter reports coverage under.
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.class, self.method)
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}/{}", self.container, self.class, self.method, self.arity)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl FromStr for MethodId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::BadMethodId(s.to_string());
        let (path, arity) = s.rsplit_once('/').ok_or_else(bad)?;
        let arity: usize = arity.parse().map_err(|_| bad())?;
        let (rest, method) = path.rsplit_once('.').ok_or_else(bad)?;
        let (container, class) = rest.rsplit_once('.').ok_or_else(bad)?;
        let parts_ok = container.split('.').all(is_ident) && is_ident(class) && is_ident(method);
        if !parts_ok {
            return Err(bad());
        }
        Ok(MethodId::new(container, class, method, arity))
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses the `targets.list` grammar: one method id per line; blank lines and
/// lines starting with `#` are ignored.
pub fn parse_target_list(text: &str) -> Result<Vec<MethodId>, ModelError> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::parse).collect()
}

pub fn render_target_list(ids: &[MethodId]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Visibility {
    Public,
    NonPublic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReceiverKind {
    Instance,
    StaticLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReturnShape {
    Unit,
    Boolean,
    IntegerLike,
    FloatLike,
    String,
    Reference,
    Collection,
    /// Declared `any`: no extreme return value can be instantiated for it.
    Dynamic,
}

impl ReturnShape {
    pub fn of(ty: &TypeName) -> ReturnShape {
        match ty {
            TypeName::Void => ReturnShape::Unit,
            TypeName::Bool => ReturnShape::Boolean,
            TypeName::Int => ReturnShape::IntegerLike,
            TypeName::Float => ReturnShape::FloatLike,
            TypeName::Str => ReturnShape::String,
            TypeName::List | TypeName::Map => ReturnShape::Collection,
            TypeName::Class(_) => ReturnShape::Reference,
            TypeName::Any => ReturnShape::Dynamic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MethodDescriptor {
    pub id: MethodId,
    pub visibility: Visibility,
    pub receiver_kind: ReceiverKind,
    pub return_shape: ReturnShape,
    pub param_count: usize,
    /// Declared return type, as written in source.
    pub return_type: String,
    /// Declared parameter types, as written in source.
    pub param_types: Vec<String>,
}

impl MethodDescriptor {
    pub fn from_decl(container: &str, class: &str, decl: &FnDecl) -> Self {
        MethodDescriptor {
            id: MethodId::new(container, class, &decl.name, decl.params.len()),
            visibility: if decl.is_pub { Visibility::Public } else { Visibility::NonPublic },
            receiver_kind: if decl.is_static { ReceiverKind::StaticLike } else { ReceiverKind::Instance },
            return_shape: ReturnShape::of(&decl.ret),
            param_count: decl.params.len(),
            return_type: decl.ret.to_string(),
            param_types: decl.params.iter().map(|p| p.ty.to_string()).collect(),
        }
    }

    pub fn is_eligible(&self) -> bool {
        self.visibility == Visibility::Public && self.receiver_kind == ReceiverKind::Instance
    }

    pub fn return_type_name(&self) -> TypeName {
        TypeName::parse(&self.return_type)
    }
}

/// Whether a serialized constituent is embedded in a generated test or
/// externalized to a resource file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    InlineCapable,
    ResourceRequired,
}

pub const DEFAULT_INLINE_THRESHOLD: usize = 1024;

/// Canonical text encoding of one value tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SerializedValue {
    text: Arc<str>,
}

impl SerializedValue {
    pub fn from_canonical(text: impl Into<Arc<str>>) -> Self {
        SerializedValue { text: text.into() }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn bytes(&self) -> &[u8] {
        self.text.as_bytes()
    }

    pub fn byte_count(&self) -> usize {
        self.text.len()
    }

    pub fn kind(&self, inline_threshold: usize) -> ValueKind {
        if self.byte_count() <= inline_threshold {
            ValueKind::InlineCapable
        } else {
            ValueKind::ResourceRequired
        }
    }
}

/// One recorded completed invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectProfile {
    pub method: MethodId,
    /// Invocation ordinal within the method, starting at 1.
    pub seq: u64,
    pub receiving: SerializedValue,
    pub parameters: Vec<SerializedValue>,
    pub result: SerializedValue,
}

impl ObjectProfile {
    /// Encoded size counted against the collection budget.
    pub fn byte_count(&self) -> usize {
        self.receiving.byte_count()
            + self.parameters.iter().map(SerializedValue::byte_count).sum::<usize>()
            + self.result.byte_count()
    }

    pub fn key(&self) -> ProfileKey {
        ProfileKey::of(self)
    }
}

/// Identity of a profile's content: digest plus the full byte material, so
/// equality never depends on the digest alone.
#[derive(Debug, Clone)]
pub struct ProfileKey {
    digest: [u8; 32],
    material: Arc<[u8]>,
}

impl ProfileKey {
    pub fn of(p: &ObjectProfile) -> ProfileKey {
        let mut material = Vec::with_capacity(p.byte_count() + 8 * (p.parameters.len() + 2));
        let mut push = |v: &SerializedValue| {
            material.extend_from_slice(&(v.byte_count() as u64).to_le_bytes());
            material.extend_from_slice(v.bytes());
        };
        push(&p.receiving);
        for param in &p.parameters {
            push(param);
        }
        push(&p.result);
        let digest: [u8; 32] = Sha256::digest(&material).into();
        ProfileKey { digest, material: material.into() }
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn hex(&self) -> String {
        hex::encode(self.digest)
    }

    /// First eight hex digits, used in generated test and resource names.
    pub fn prefix8(&self) -> String {
        hex::encode(&self.digest[..4])
    }
}

impl PartialEq for ProfileKey {
    fn eq(&self, other: &Self) -> bool {
        self.digest == other.digest && self.material == other.material
    }
}

impl Eq for ProfileKey {}

impl std::hash::Hash for ProfileKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.digest.hash(state);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(s: &str) -> SerializedValue {
        SerializedValue::from_canonical(s)
    }

    fn profile(seq: u64, params: &[&str], result: &str) -> ObjectProfile {
        ObjectProfile {
            method: "fonts.NamingTable.getName/4".parse().unwrap(),
            seq,
            receiving: sv("NamingTable#0{lookup:map#1{}}"),
            parameters: params.iter().map(|p| sv(p)).collect(),
            result: sv(result),
        }
    }

    #[test]
    fn method_id_round_trip() {
        let id: MethodId = "fonts.NamingTable.getName/4".parse().unwrap();
        assert_eq!(id, MethodId::new("fonts", "NamingTable", "getName", 4));
        assert_eq!(id.to_string(), "fonts.NamingTable.getName/4");
        assert_eq!(id.file_stem(), "fonts.NamingTable.getName@4");
        assert_eq!(MethodId::from_file_stem(&id.file_stem()).unwrap(), id);
        let nested: MethodId = "shop.cart.Cart.total/0".parse().unwrap();
        assert_eq!(nested.container, "shop.cart");
        for bad in ["getName/4", "a.B.c", "a.B.c/x", "a..c/1", "a.B.c d/1", ""] {
            assert!(bad.parse::<MethodId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn target_list_grammar() {
        let text = "# targets\n\nfonts.NamingTable.getName/4\n  cart.Cart.total/0  \n";
        let ids = parse_target_list(text).unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(parse_target_list(&render_target_list(&ids)).unwrap(), ids);
        assert!(parse_target_list("nonsense\n").is_err());
    }

    #[test]
    fn inline_threshold_kind() {
        assert_eq!(sv("0").kind(DEFAULT_INLINE_THRESHOLD), ValueKind::InlineCapable);
        let big = "\"".to_string() + &"x".repeat(1100) + "\"";
        assert_eq!(sv(&big).kind(DEFAULT_INLINE_THRESHOLD), ValueKind::ResourceRequired);
        assert_eq!(sv(&"1".repeat(1024)).kind(1024), ValueKind::InlineCapable);
    }

    #[test]
    fn keys_ignore_seq() {
        let a = profile(1, &["6", "1", "0", "0"], "\"LiberationSans\"");
        let b = profile(99, &["6", "1", "0", "0"], "\"LiberationSans\"");
        assert_eq!(a.key(), b.key());
    }

    #[test]
    fn keys_distinguish_constituent_boundaries() {
        // Same concatenated bytes, different split between parameters.
        let a = profile(1, &["12", "3"], "null");
        let b = profile(1, &["1", "23"], "null");
        assert_ne!(a.key(), b.key());
    }

    #[test]
    fn single_byte_perturbations_change_the_key() {
        let base = profile(1, &["6", "1", "0", "0"], "\"LiberationSans\"");
        let key = base.key();
        let constituents = 2 + base.parameters.len();
        for ci in 0..constituents {
            let text = match ci {
                0 => base.receiving.as_str(),
                c if c == constituents - 1 => base.result.as_str(),
                c => base.parameters[c - 1].as_str(),
            }
            .to_string();
            for i in 0..text.len() {
                for replacement in *b"aZ9\"" {
                    let mut bytes = text.clone().into_bytes();
                    if bytes[i] == replacement {
                        continue;
                    }
                    bytes[i] = replacement;
                    let changed = sv(std::str::from_utf8(&bytes).unwrap());
                    let mut p = base.clone();
                    match ci {
                        0 => p.receiving = changed,
                        c if c == constituents - 1 => p.result = changed,
                        c => p.parameters[c - 1] = changed,
                    }
                    assert_ne!(p.key(), key, "constituent {ci}, byte {i}");
                }
            }
        }
    }
}
