//! Native range-coder kernel.
//!
//! Byte-exact re-implementation of the reference coder: 32-bit range,
//! renormalization below 2^24, 16-bit CDF totals, carry handling through a
//! cache byte. The FFI carries flat integer arrays and byte buffers only.
//!
//! Symbol tables are strictly increasing cumulative counts from 0 to 65536;
//! the last index of each table is an escape slot followed by the raw value
//! as four uniform-coded bytes.

const PRECISION: u32 = 16;
const TOTAL: u32 = 1 << PRECISION;
const TOP: u32 = 1 << 24;

pub const OK: i32 = 0;
pub const ERR_ARGS: i32 = 1;
pub const ERR_BAD_CDF: i32 = 2;
pub const ERR_BAD_TABLE_ID: i32 = 3;
pub const ERR_FINISHED: i32 = 4;

// -------------------------------------------------------------------------
// table view over the flat FFI arrays
// -------------------------------------------------------------------------

struct Tables<'a> {
    cdf_concat: &'a [u32],
    starts: &'a [u32],
    offsets: &'a [i32],
}

impl<'a> Tables<'a> {
    fn validate(&self) -> i32 {
        let n = self.offsets.len();
        if self.starts.len() != n + 1 {
            return ERR_ARGS;
        }
        for t in 0..n {
            let lo = self.starts[t] as usize;
            let hi = self.starts[t + 1] as usize;
            if hi <= lo || hi > self.cdf_concat.len() {
                return ERR_BAD_CDF;
            }
            let cdf = &self.cdf_concat[lo..hi];
            if cdf.len() < 2 || cdf[0] != 0 || *cdf.last().unwrap() != TOTAL {
                return ERR_BAD_CDF;
            }
            for w in cdf.windows(2) {
                if w[0] >= w[1] {
                    return ERR_BAD_CDF;
                }
            }
        }
        OK
    }

    fn cdf(&self, id: u32) -> Option<&'a [u32]> {
        let t = id as usize;
        if t + 1 >= self.starts.len() {
            return None;
        }
        Some(&self.cdf_concat[self.starts[t] as usize..self.starts[t + 1] as usize])
    }
}

const BYTE_CDF: [u32; 257] = {
    let mut c = [0u32; 257];
    let mut i = 0;
    while i < 257 {
        c[i] = (i as u32) << 8;
        i += 1;
    }
    c
};

// -------------------------------------------------------------------------
// encoder
// -------------------------------------------------------------------------

pub struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    finished: bool,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Encoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            finished: false,
        }
    }

    #[inline]
    fn shift_low(&mut self) {
        let low32 = self.low as u32;
        if low32 < 0xFF00_0000 || self.low > u32::MAX as u64 {
            let carry = (self.low >> 32) as u8;
            self.out.push(self.cache.wrapping_add(carry));
            let filler = 0xFFu8.wrapping_add(carry);
            for _ in 0..self.cache_size - 1 {
                self.out.push(filler);
            }
            self.cache_size = 0;
            self.cache = (low32 >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = ((low32 & 0x00FF_FFFF) as u64) << 8;
    }

    #[inline]
    pub fn encode_symbol(&mut self, cdf: &[u32], index: usize) {
        let lo = cdf[index];
        let hi = cdf[index + 1];
        let r = self.range >> PRECISION;
        self.low += (r as u64) * (lo as u64);
        self.range = r * (hi - lo);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode_value(&mut self, cdf: &[u32], offset: i32, value: i32) {
        let escape = cdf.len() - 2;
        let index = value.wrapping_sub(offset);
        if index >= 0 && (index as usize) < escape {
            self.encode_symbol(cdf, index as usize);
        } else {
            self.encode_symbol(cdf, escape);
            let raw = value as u32;
            for shift in [24u32, 16, 8, 0] {
                self.encode_symbol(&BYTE_CDF, ((raw >> shift) & 0xFF) as usize);
            }
        }
    }

    pub fn finish(&mut self) -> &[u8] {
        if !self.finished {
            for _ in 0..5 {
                self.shift_low();
            }
            self.finished = true;
        }
        &self.out
    }
}

// -------------------------------------------------------------------------
// decoder
// -------------------------------------------------------------------------

pub struct Decoder {
    data: Vec<u8>,
    pos: usize,
    range: u32,
    code: u32,
}

impl Decoder {
    pub fn new(data: Vec<u8>) -> Self {
        let mut d = Decoder {
            data,
            pos: 1, // first encoder byte is always zero
            range: u32::MAX,
            code: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    #[inline]
    fn next_byte(&mut self) -> u8 {
        let b = if self.pos < self.data.len() {
            self.data[self.pos]
        } else {
            0
        };
        self.pos += 1;
        b
    }

    #[inline]
    pub fn decode_symbol(&mut self, cdf: &[u32]) -> usize {
        let r = self.range >> PRECISION;
        let mut target = self.code / r;
        if target >= TOTAL {
            target = TOTAL - 1;
        }
        // binary search: greatest index with cdf[index] <= target
        let mut lo = 0usize;
        let mut hi = cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if cdf[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let index = lo;
        self.code -= r * cdf[index];
        self.range = r * (cdf[index + 1] - cdf[index]);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
        index
    }

    pub fn decode_value(&mut self, cdf: &[u32], offset: i32) -> i32 {
        let escape = cdf.len() - 2;
        let index = self.decode_symbol(cdf);
        if index != escape {
            return offset.wrapping_add(index as i32);
        }
        let mut raw: u32 = 0;
        for _ in 0..4 {
            raw = (raw << 8) | self.decode_symbol(&BYTE_CDF) as u32;
        }
        raw as i32
    }
}

// -------------------------------------------------------------------------
// C ABI
// -------------------------------------------------------------------------

unsafe fn tables_from_raw<'a>(
    cdf_concat: *const u32,
    cdf_starts: *const u32,
    offsets: *const i32,
    n_tables: usize,
) -> Option<Tables<'a>> {
    if cdf_starts.is_null() || offsets.is_null() || (n_tables > 0 && cdf_concat.is_null()) {
        return None;
    }
    let starts = std::slice::from_raw_parts(cdf_starts, n_tables + 1);
    let total = starts[n_tables] as usize;
    Some(Tables {
        cdf_concat: if total == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(cdf_concat, total)
        },
        starts,
        offsets: std::slice::from_raw_parts(offsets, n_tables),
    })
}

#[no_mangle]
pub extern "C" fn rck_encoder_new() -> *mut Encoder {
    Box::into_raw(Box::new(Encoder::new()))
}

/// Encode `n` (value, table-id) pairs. Returns 0 on success.
///
/// # Safety
/// All pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn rck_encoder_encode(
    enc: *mut Encoder,
    values: *const i32,
    table_ids: *const u32,
    n: usize,
    cdf_concat: *const u32,
    cdf_starts: *const u32,
    offsets: *const i32,
    n_tables: usize,
) -> i32 {
    if enc.is_null() || (n > 0 && (values.is_null() || table_ids.is_null())) {
        return ERR_ARGS;
    }
    let enc = &mut *enc;
    if enc.finished {
        return ERR_FINISHED;
    }
    let tables = match tables_from_raw(cdf_concat, cdf_starts, offsets, n_tables) {
        Some(t) => t,
        None => return ERR_ARGS,
    };
    let rc = tables.validate();
    if rc != OK {
        return rc;
    }
    let values = std::slice::from_raw_parts(values, n);
    let ids = std::slice::from_raw_parts(table_ids, n);
    for i in 0..n {
        let cdf = match tables.cdf(ids[i]) {
            Some(c) => c,
            None => return ERR_BAD_TABLE_ID,
        };
        enc.encode_value(cdf, tables.offsets[ids[i] as usize], values[i]);
    }
    OK
}

/// Finalize the stream; the returned pointer stays valid until the encoder
/// is freed.
///
/// # Safety
/// `enc` must come from `rck_encoder_new`; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rck_encoder_finish(
    enc: *mut Encoder,
    out_len: *mut usize,
) -> *const u8 {
    if enc.is_null() || out_len.is_null() {
        return std::ptr::null();
    }
    let enc = &mut *enc;
    let data = enc.finish();
    *out_len = data.len();
    data.as_ptr()
}

/// # Safety
/// `enc` must come from `rck_encoder_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rck_encoder_free(enc: *mut Encoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

/// # Safety
/// `data` must reference `len` readable bytes (copied internally).
#[no_mangle]
pub unsafe extern "C" fn rck_decoder_new(data: *const u8, len: usize) -> *mut Decoder {
    let buf = if len == 0 || data.is_null() {
        Vec::new()
    } else {
        std::slice::from_raw_parts(data, len).to_vec()
    };
    Box::into_raw(Box::new(Decoder::new(buf)))
}

/// Decode `n` values for the given table ids. Returns 0 on success.
///
/// # Safety
/// All pointers must reference buffers of the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn rck_decoder_decode(
    dec: *mut Decoder,
    table_ids: *const u32,
    n: usize,
    cdf_concat: *const u32,
    cdf_starts: *const u32,
    offsets: *const i32,
    n_tables: usize,
    out: *mut i32,
) -> i32 {
    if dec.is_null() || (n > 0 && (table_ids.is_null() || out.is_null())) {
        return ERR_ARGS;
    }
    let dec = &mut *dec;
    let tables = match tables_from_raw(cdf_concat, cdf_starts, offsets, n_tables) {
        Some(t) => t,
        None => return ERR_ARGS,
    };
    let rc = tables.validate();
    if rc != OK {
        return rc;
    }
    let ids = std::slice::from_raw_parts(table_ids, n);
    let out = std::slice::from_raw_parts_mut(out, n);
    for i in 0..n {
        let cdf = match tables.cdf(ids[i]) {
            Some(c) => c,
            None => return ERR_BAD_TABLE_ID,
        };
        out[i] = dec.decode_value(cdf, tables.offsets[ids[i] as usize]);
    }
    OK
}

/// # Safety
/// `dec` must come from `rck_decoder_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn rck_decoder_free(dec: *mut Decoder) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

// -------------------------------------------------------------------------
// tests
// -------------------------------------------------------------------------
