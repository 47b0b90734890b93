//! Minimal pickle reader for the vendor dataset archives.
//!
//! The wrist datasets ship as Python pickles (protocol 2 originally, 4/5 when
//! re-pickled) whose payload is a nested dict of numpy arrays. This module
//! implements just enough of the pickle virtual machine to decode that shape
//! without a Python runtime: binary opcodes of protocols 2–5 plus the numpy
//! `_reconstruct`/`dtype`/`scalar` reduce protocol and the `_codecs.encode`
//! detour protocol-2 pickles use for byte strings.
//!
//! Everything is bounds-checked and allocation-capped; malformed input yields
//! an [`Error::Format`], never a panic. A fuzz target drives this entry point.

use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Decoded numpy array. Values are widened to f64 regardless of the on-disk
/// dtype; integer and float dtypes up to 8 bytes are supported.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: Rc<Vec<f64>>,
}

impl NdArray {
    pub fn ndim(&self) -> usize {
        self.shape.len()
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column `c` of a 2-D array.
    pub fn column(&self, c: usize) -> Option<Vec<f64>> {
        if self.shape.len() != 2 || c >= self.shape[1] {
            return None;
        }
        let (rows, cols) = (self.shape[0], self.shape[1]);
        Some((0..rows).map(|r| self.data[r * cols + c]).collect())
    }

    /// Flatten to a 1-D vector (works for (N,) and (N,1) shapes).
    pub fn flat(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }
}

/// A decoded pickle value.
#[derive(Debug, Clone)]
pub enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Rc<Vec<u8>>),
    List(Vec<Value>),
    Tuple(Vec<Value>),
    Dict(BTreeMap<String, Value>),
    Array(NdArray),
    /// Imported global we do not interpret (module, name).
    Global(String, String),
    /// Reduced object we do not interpret further.
    Opaque(String, String),
}

impl Value {
    pub fn get(&self, key: &str) -> Option<&Value> {
        match self {
            Value::Dict(map) => map.get(key),
            _ => None,
        }
    }
    pub fn as_array(&self) -> Option<&NdArray> {
        match self {
            Value::Array(a) => Some(a),
            _ => None,
        }
    }
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

/// Parse a pickle byte stream into a [`Value`].
pub fn parse(bytes: &[u8]) -> Result<Value> {
    Vm::new(bytes).run()
}

const MAX_DEPTH: u32 = 256;

fn err(msg: impl Into<String>) -> Error {
    Error::format(format!("pickle: {}", msg.into()))
}

/// Stack entry: value plus its container-nesting depth (guards pathological
/// inputs from building unboundedly deep structures).
type Entry = (Value, u32);

struct Vm<'a> {
    input: &'a [u8],
    pos: usize,
    stack: Vec<Entry>,
    marks: Vec<usize>,
    memo: BTreeMap<u32, Entry>,
}

impl<'a> Vm<'a> {
    fn new(input: &'a [u8]) -> Self {
        Vm { input, pos: 0, stack: Vec::new(), marks: Vec::new(), memo: BTreeMap::new() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| err("length overflow"))?;
        if end > self.input.len() {
            return Err(err("truncated input"));
        }
        let slice = &self.input[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16le(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32le(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn i32le(&mut self) -> Result<i32> {
        let b = self.take(4)?;
        Ok(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64le(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn len_checked(&self, n: u64) -> Result<usize> {
        let n = usize::try_from(n).map_err(|_| err("length overflow"))?;
        if n > self.input.len() - self.pos {
            return Err(err("declared length exceeds input"));
        }
        Ok(n)
    }

    fn line(&mut self) -> Result<&'a str> {
        let start = self.pos;
        while self.pos < self.input.len() && self.input[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.input.len() {
            return Err(err("unterminated line"));
        }
        let s = std::str::from_utf8(&self.input[start..self.pos])
            .map_err(|_| err("non-utf8 global name"))?;
        self.pos += 1;
        Ok(s)
    }

    fn push(&mut self, v: Value, depth: u32) -> Result<()> {
        if depth > MAX_DEPTH {
            return Err(err("nesting too deep"));
        }
        if self.stack.len() >= 1 << 20 {
            return Err(err("stack too large"));
        }
        self.stack.push((v, depth));
        Ok(())
    }

    fn pop(&mut self) -> Result<Entry> {
        self.stack.pop().ok_or_else(|| err("stack underflow"))
    }

    /// Pop everything above the most recent mark.
    fn pop_mark(&mut self) -> Result<Vec<Entry>> {
        let mark = self.marks.pop().ok_or_else(|| err("no mark"))?;
        if mark > self.stack.len() {
            return Err(err("corrupt mark"));
        }
        Ok(self.stack.split_off(mark))
    }

    fn run(mut self) -> Result<Value> {
        loop {
            let op = self.u8()?;
            match op {
                0x80 => {
                    let _proto = self.u8()?;
                }
                0x95 => {
                    let _frame_len = self.u64le()?;
                }
                b'.' => {
                    let (v, _) = self.pop()?;
                    return Ok(v);
                }
                b'(' => self.marks.push(self.stack.len()),
                b'0' => {
                    self.pop()?;
                }
                b'1' => {
                    self.pop_mark()?;
                }
                b'2' => {
                    let top = self.stack.last().cloned().ok_or_else(|| err("dup on empty"))?;
                    self.stack.push(top);
                }
                b'N' => self.push(Value::None, 0)?,
                0x88 => self.push(Value::Bool(true), 0)?,
                0x89 => self.push(Value::Bool(false), 0)?,
                b'J' => {
                    let v = self.i32le()?;
                    self.push(Value::Int(v as i64), 0)?;
                }
                b'K' => {
                    let v = self.u8()?;
                    self.push(Value::Int(v as i64), 0)?;
                }
                b'M' => {
                    let v = self.u16le()?;
                    self.push(Value::Int(v as i64), 0)?;
                }
                0x8a => {
                    // LONG1: n bytes of little-endian two's complement
                    let n = self.u8()? as usize;
                    let b = self.take(n)?;
                    self.push(Value::Int(long_from_le(b)?), 0)?;
                }
                0x8b => {
                    let n = self.u32le()?;
                    let n = self.len_checked(n as u64)?;
                    let b = self.take(n)?;
                    self.push(Value::Int(long_from_le(b)?), 0)?;
                }
                b'G' => {
                    // BINFLOAT is big-endian
                    let b = self.take(8)?;
                    let v = f64::from_be_bytes(b.try_into().unwrap());
                    self.push(Value::Float(v), 0)?;
                }
                b'T' => {
                    let n = self.u32le()?;
                    let n = self.len_checked(n as u64)?;
                    let b = self.take(n)?.to_vec();
                    // Protocol-2 byte strings; kept as bytes, coerced to str on demand.
                    self.push(Value::Bytes(Rc::new(b)), 0)?;
                }
                b'U' => {
                    let n = self.u8()? as usize;
                    let b = self.take(n)?.to_vec();
                    self.push(Value::Bytes(Rc::new(b)), 0)?;
                }
                b'B' => {
                    let n = self.u32le()?;
                    let n = self.len_checked(n as u64)?;
                    let b = self.take(n)?.to_vec();
                    self.push(Value::Bytes(Rc::new(b)), 0)?;
                }
                b'C' => {
                    let n = self.u8()? as usize;
                    let b = self.take(n)?.to_vec();
                    self.push(Value::Bytes(Rc::new(b)), 0)?;
                }
                0x8e | 0x96 => {
                    // BINBYTES8 / BYTEARRAY8
                    let n = self.u64le()?;
                    let n = self.len_checked(n)?;
                    let b = self.take(n)?.to_vec();
                    self.push(Value::Bytes(Rc::new(b)), 0)?;
                }
                b'X' => {
                    let n = self.u32le()?;
                    let n = self.len_checked(n as u64)?;
                    let b = self.take(n)?;
                    let s = std::str::from_utf8(b).map_err(|_| err("invalid utf8 string"))?;
                    self.push(Value::Str(s.to_string()), 0)?;
                }
                0x8c => {
                    let n = self.u8()? as usize;
                    let b = self.take(n)?;
                    let s = std::str::from_utf8(b).map_err(|_| err("invalid utf8 string"))?;
                    self.push(Value::Str(s.to_string()), 0)?;
                }
                0x8d => {
                    let n = self.u64le()?;
                    let n = self.len_checked(n)?;
                    let b = self.take(n)?;
                    let s = std::str::from_utf8(b).map_err(|_| err("invalid utf8 string"))?;
                    self.push(Value::Str(s.to_string()), 0)?;
                }
                b')' => self.push(Value::Tuple(Vec::new()), 1)?,
                b't' => {
                    let items = self.pop_mark()?;
                    let depth = max_depth(&items) + 1;
                    self.push(Value::Tuple(items.into_iter().map(|e| e.0).collect()), depth)?;
                }
                0x85..=0x87 => {
                    let n = (op - 0x84) as usize;
                    if self.stack.len() < n {
                        return Err(err("stack underflow in tuple"));
                    }
                    let items = self.stack.split_off(self.stack.len() - n);
                    let depth = max_depth(&items) + 1;
                    self.push(Value::Tuple(items.into_iter().map(|e| e.0).collect()), depth)?;
                }
                b']' => self.push(Value::List(Vec::new()), 1)?,
                b'l' => {
                    let items = self.pop_mark()?;
                    let depth = max_depth(&items) + 1;
                    self.push(Value::List(items.into_iter().map(|e| e.0).collect()), depth)?;
                }
                b'a' => {
                    let (item, d_item) = self.pop()?;
                    let (list, d_list) = self.pop()?;
                    match list {
                        Value::List(mut v) => {
                            v.push(item);
                            self.push(Value::List(v), d_list.max(d_item + 1))?;
                        }
                        _ => return Err(err("append to non-list")),
                    }
                }
                b'e' => {
                    let items = self.pop_mark()?;
                    let d_items = max_depth(&items);
                    let (list, d_list) = self.pop()?;
                    match list {
                        Value::List(mut v) => {
                            v.extend(items.into_iter().map(|e| e.0));
                            self.push(Value::List(v), d_list.max(d_items + 1))?;
                        }
                        _ => return Err(err("appends to non-list")),
                    }
                }
                b'}' => self.push(Value::Dict(BTreeMap::new()), 1)?,
                b'd' => {
                    let items = self.pop_mark()?;
                    let depth = max_depth(&items) + 1;
                    let dict = dict_from_pairs(items)?;
                    self.push(dict, depth)?;
                }
                b's' => {
                    let (val, d_val) = self.pop()?;
                    let (key, _) = self.pop()?;
                    let (dict, d_dict) = self.pop()?;
                    match dict {
                        Value::Dict(mut m) => {
                            m.insert(key_string(&key)?, val);
                            self.push(Value::Dict(m), d_dict.max(d_val + 1))?;
                        }
                        _ => return Err(err("setitem on non-dict")),
                    }
                }
                b'u' => {
                    let items = self.pop_mark()?;
                    if items.len() % 2 != 0 {
                        return Err(err("odd setitems"));
                    }
                    let d_items = max_depth(&items);
                    let (dict, d_dict) = self.pop()?;
                    match dict {
                        Value::Dict(mut m) => {
                            let mut it = items.into_iter();
                            while let (Some((k, _)), Some((v, _))) = (it.next(), it.next()) {
                                m.insert(key_string(&k)?, v);
                            }
                            self.push(Value::Dict(m), d_dict.max(d_items + 1))?;
                        }
                        _ => return Err(err("setitems on non-dict")),
                    }
                }
                b'q' => {
                    let idx = self.u8()? as u32;
                    self.memo_put(idx)?;
                }
                b'r' => {
                    let idx = self.u32le()?;
                    self.memo_put(idx)?;
                }
                0x94 => {
                    let idx = self.memo.len() as u32;
                    self.memo_put(idx)?;
                }
                b'h' => {
                    let idx = self.u8()? as u32;
                    self.memo_get(idx)?;
                }
                b'j' => {
                    let idx = self.u32le()?;
                    self.memo_get(idx)?;
                }
                b'c' => {
                    let module = self.line()?.to_string();
                    let name = self.line()?.to_string();
                    self.push(Value::Global(module, name), 0)?;
                }
                0x93 => {
                    let (name, _) = self.pop()?;
                    let (module, _) = self.pop()?;
                    match (module, name) {
                        (Value::Str(m), Value::Str(n)) => self.push(Value::Global(m, n), 0)?,
                        _ => return Err(err("stack_global expects two strings")),
                    }
                }
                b'R' => {
                    let (args, d_args) = self.pop()?;
                    let (callable, _) = self.pop()?;
                    let reduced = self.reduce(callable, args)?;
                    self.push(reduced, d_args + 1)?;
                }
                0x81 => {
                    // NEWOBJ: cls.__new__(cls, *args) — treat like REDUCE
                    let (args, d_args) = self.pop()?;
                    let (cls, _) = self.pop()?;
                    let reduced = self.reduce(cls, args)?;
                    self.push(reduced, d_args + 1)?;
                }
                b'b' => {
                    let (state, d_state) = self.pop()?;
                    let (obj, d_obj) = self.pop()?;
                    let built = build(obj, state)?;
                    self.push(built, d_obj.max(d_state))?;
                }
                other => {
                    return Err(err(format!("unsupported opcode 0x{other:02x} at {}", self.pos - 1)));
                }
            }
        }
    }

    fn memo_put(&mut self, idx: u32) -> Result<()> {
        let top = self.stack.last().cloned().ok_or_else(|| err("memo put on empty stack"))?;
        if self.memo.len() >= 1 << 22 {
            return Err(err("memo too large"));
        }
        self.memo.insert(idx, top);
        Ok(())
    }

    fn memo_get(&mut self, idx: u32) -> Result<()> {
        let entry = self.memo.get(&idx).cloned().ok_or_else(|| err("memo get out of range"))?;
        self.push(entry.0, entry.1)
    }

    /// Apply a callable. Only the numpy/_codecs constructors needed by the
    /// dataset pickles are interpreted; anything else becomes [`Value::Opaque`].
    fn reduce(&mut self, callable: Value, args: Value) -> Result<Value> {
        let (module, name) = match callable {
            Value::Global(m, n) => (m, n),
            _ => return Err(err("reduce on non-global")),
        };
        let args = match args {
            Value::Tuple(items) => items,
            _ => return Err(err("reduce args must be a tuple")),
        };
        match (module.as_str(), name.as_str()) {
            ("_codecs", "encode") => {
                let s = args
                    .first()
                    .and_then(Value::as_str)
                    .ok_or_else(|| err("_codecs.encode expects a string"))?;
                let bytes = latin1_encode(s).ok_or_else(|| err("non-latin1 encoded bytes"))?;
                Ok(Value::Bytes(Rc::new(bytes)))
            }
            ("numpy.core.multiarray" | "numpy._core.multiarray", "_reconstruct") => {
                // args: (ndarray_cls, (0,), b'b'); real content arrives via BUILD
                Ok(Value::Opaque("numpy".into(), "ndarray_stub".into()))
            }
            ("numpy", "ndarray") => Ok(Value::Opaque("numpy".into(), "ndarray_stub".into())),
            ("numpy", "dtype") => {
                let descr = match args.first() {
                    Some(Value::Str(s)) => s.clone(),
                    Some(Value::Bytes(b)) => String::from_utf8_lossy(b).into_owned(),
                    _ => return Err(err("dtype descriptor must be a string")),
                };
                Ok(Value::Opaque("dtype".into(), descr))
            }
            ("numpy.core.multiarray" | "numpy._core.multiarray", "scalar") => {
                let dtype = args.first().ok_or_else(|| err("scalar needs a dtype"))?;
                let data = match args.get(1) {
                    Some(Value::Bytes(b)) => b.as_ref().clone(),
                    _ => return Err(err("scalar needs raw bytes")),
                };
                let descr = match dtype {
                    Value::Opaque(kind, d) if kind == "dtype" => d.clone(),
                    _ => return Err(err("scalar dtype not understood")),
                };
                let values = decode_dtype(&descr, &data)?;
                Ok(Value::Float(*values.first().ok_or_else(|| err("empty scalar"))?))
            }
            (m, n) => Ok(Value::Opaque(m.to_string(), n.to_string())),
        }
    }
}

/// BUILD: attach state to an object. For ndarray stubs this decodes the
/// array; dtype state updates the byte order; anything else keeps the state
/// as the object (covers plain `__dict__` objects).
fn build(obj: Value, state: Value) -> Result<Value> {
    match obj {
        Value::Opaque(kind, detail) if kind == "numpy" && detail == "ndarray_stub" => {
            ndarray_from_state(state)
        }
        Value::Opaque(kind, descr) if kind == "dtype" => {
            // state: (ver, byteorder, ...)
            let byteorder = match &state {
                Value::Tuple(items) => items.get(1).and_then(Value::as_str).unwrap_or("<").to_string(),
                _ => "<".to_string(),
            };
            let full = if descr.starts_with(['<', '>', '|', '=']) {
                descr
            } else {
                format!("{byteorder}{descr}")
            };
            Ok(Value::Opaque("dtype".into(), full))
        }
        Value::Opaque(..) => Ok(state),
        other => Ok(other),
    }
}

/// Decode the `__setstate__` tuple of an ndarray:
/// `(version, shape, dtype, is_fortran, data)`.
fn ndarray_from_state(state: Value) -> Result<Value> {
    let items = match state {
        Value::Tuple(items) => items,
        _ => return Err(err("ndarray state must be a tuple")),
    };
    if items.len() < 5 {
        return Err(err("ndarray state too short"));
    }
    let shape: Vec<usize> = match &items[1] {
        Value::Tuple(dims) => dims
            .iter()
            .map(|d| match d {
                Value::Int(v) if *v >= 0 => Ok(*v as usize),
                _ => Err(err("bad shape entry")),
            })
            .collect::<Result<_>>()?,
        _ => return Err(err("ndarray shape must be a tuple")),
    };
    let descr = match &items[2] {
        Value::Opaque(kind, d) if kind == "dtype" => d.clone(),
        _ => return Err(err("ndarray dtype not understood")),
    };
    let fortran = matches!(items[3], Value::Bool(true) | Value::Int(1));
    let data = match &items[4] {
        Value::Bytes(b) => b.as_ref().clone(),
        _ => return Err(err("ndarray data must be bytes")),
    };

    let mut values = decode_dtype(&descr, &data)?;
    let total: usize = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| err("shape product overflow"))?;
    if total != values.len() {
        return Err(err(format!(
            "shape {shape:?} implies {total} elements, data holds {}",
            values.len()
        )));
    }
    if fortran && shape.len() > 1 {
        values = fortran_to_c(&values, &shape);
    }
    Ok(Value::Array(NdArray { shape, data: Rc::new(values) }))
}

fn decode_dtype(descr: &str, data: &[u8]) -> Result<Vec<f64>> {
    let (be, code) = match descr.as_bytes().first() {
        Some(b'<') | Some(b'=') | Some(b'|') => (false, &descr[1..]),
        Some(b'>') => (true, &descr[1..]),
        _ => (false, descr),
    };
    let item = match code {
        "f8" | "i8" | "u8" => 8,
        "f4" | "i4" | "u4" => 4,
        "i2" | "u2" => 2,
        "i1" | "u1" | "b1" => 1,
        other => return Err(err(format!("unsupported dtype `{other}`"))),
    };
    if data.len() % item != 0 {
        return Err(err("data length not a multiple of item size"));
    }
    let n = data.len() / item;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let chunk = &data[i * item..(i + 1) * item];
        let v = match code {
            "f8" => {
                let raw: [u8; 8] = chunk.try_into().unwrap();
                if be { f64::from_be_bytes(raw) } else { f64::from_le_bytes(raw) }
            }
            "f4" => {
                let raw: [u8; 4] = chunk.try_into().unwrap();
                (if be { f32::from_be_bytes(raw) } else { f32::from_le_bytes(raw) }) as f64
            }
            "i8" => {
                let raw: [u8; 8] = chunk.try_into().unwrap();
                (if be { i64::from_be_bytes(raw) } else { i64::from_le_bytes(raw) }) as f64
            }
            "u8" => {
                let raw: [u8; 8] = chunk.try_into().unwrap();
                (if be { u64::from_be_bytes(raw) } else { u64::from_le_bytes(raw) }) as f64
            }
            "i4" => {
                let raw: [u8; 4] = chunk.try_into().unwrap();
                (if be { i32::from_be_bytes(raw) } else { i32::from_le_bytes(raw) }) as f64
            }
            "u4" => {
                let raw: [u8; 4] = chunk.try_into().unwrap();
                (if be { u32::from_be_bytes(raw) } else { u32::from_le_bytes(raw) }) as f64
            }
            "i2" => {
                let raw: [u8; 2] = chunk.try_into().unwrap();
                (if be { i16::from_be_bytes(raw) } else { i16::from_le_bytes(raw) }) as f64
            }
            "u2" => {
                let raw: [u8; 2] = chunk.try_into().unwrap();
                (if be { u16::from_be_bytes(raw) } else { u16::from_le_bytes(raw) }) as f64
            }
            "i1" => chunk[0] as i8 as f64,
            "u1" | "b1" => chunk[0] as f64,
            _ => unreachable!(),
        };
        out.push(v);
    }
    Ok(out)
}

fn fortran_to_c(values: &[f64], shape: &[usize]) -> Vec<f64> {
    let ndim = shape.len();
    let mut fstrides = vec![1usize; ndim];
    for d in 1..ndim {
        fstrides[d] = fstrides[d - 1] * shape[d - 1];
    }
    let total = values.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; ndim];
    for _ in 0..total {
        let f_off: usize = idx.iter().zip(&fstrides).map(|(i, s)| i * s).sum();
        out.push(values[f_off]);
        // increment C-order multi-index (last dim fastest)
        for d in (0..ndim).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

fn max_depth(items: &[Entry]) -> u32 {
    items.iter().map(|e| e.1).max().unwrap_or(0)
}

fn dict_from_pairs(items: Vec<Entry>) -> Result<Value> {
    if items.len() % 2 != 0 {
        return Err(err("odd dict items"));
    }
    let mut m = BTreeMap::new();
    let mut it = items.into_iter();
    while let (Some((k, _)), Some((v, _))) = (it.next(), it.next()) {
        m.insert(key_string(&k)?, v);
    }
    Ok(Value::Dict(m))
}

/// Dict keys in the dataset pickles are short strings; protocol-2 files
/// deliver them as byte strings.
fn key_string(key: &Value) -> Result<String> {
    match key {
        Value::Str(s) => Ok(s.clone()),
        Value::Bytes(b) => Ok(String::from_utf8_lossy(b).into_owned()),
        Value::Int(i) => Ok(i.to_string()),
        _ => Err(err("unsupported dict key type")),
    }
}

fn long_from_le(bytes: &[u8]) -> Result<i64> {
    if bytes.is_empty() {
        return Ok(0);
    }
    if bytes.len() > 8 {
        return Err(err("integer too large"));
    }
    let mut buf = [0u8; 8];
    let negative = bytes.last().map(|b| b & 0x80 != 0).unwrap_or(false);
    if negative {
        buf = [0xff; 8];
    }
    buf[..bytes.len()].copy_from_slice(bytes);
    Ok(i64::from_le_bytes(buf))
}

/// Encode a string whose chars are all < U+0100 back into raw bytes.
fn latin1_encode(s: &str) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len());
    for ch in s.chars() {
        let code = ch as u32;
        if code > 0xff {
            return None;
        }
        out.push(code as u8);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_an_error() {
        assert!(parse(&[]).is_err());
    }

    #[test]
    fn truncated_stream_is_an_error() {
        // PROTO 4, FRAME ... but nothing after
        assert!(parse(&[0x80, 0x04]).is_err());
    }

    #[test]
    fn simple_dict_roundtrip() {
        // pickle.dumps({"a": 1}, protocol=2) == b'\x80\x02}q\x00U\x01aq\x01K\x01s.'
        let raw = b"\x80\x02}q\x00U\x01aq\x01K\x01s.";
        let v = parse(raw).unwrap();
        match v.get("a") {
            Some(Value::Int(1)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binfloat_is_big_endian() {
        // pickle.dumps(1.5, protocol=2) == b'\x80\x02G?\xf8\x00\x00\x00\x00\x00\x00.'
        let raw = b"\x80\x02G\x3f\xf8\x00\x00\x00\x00\x00\x00.";
        match parse(raw).unwrap() {
            Value::Float(f) => assert_eq!(f, 1.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn depth_limit_holds() {
        // Deeply nested tuples: N × (TUPLE1 after a NONE)
        let mut raw = vec![0x80, 0x02, b'N'];
        for _ in 0..10_000 {
            raw.push(0x85);
        }
        raw.push(b'.');
        assert!(parse(&raw).is_err());
    }
}
