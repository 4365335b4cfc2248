//! MSB-first bit packing.

pub(crate) struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    pub fn new(out: Vec<u8>) -> Self {
        Self {
            out,
            acc: 0,
            filled: 0,
        }
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write(&mut self, value: u32, width: u32) {
        debug_assert!(width <= 32);
        debug_assert!(width == 32 || value >> width == 0);
        if width == 0 {
            return;
        }
        self.acc = (self.acc << width) | value as u64;
        self.filled += width;
        while self.filled >= 8 {
            self.filled -= 8;
            self.out.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    /// Flushes a partial byte, zero-padded on the right.
    pub fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
        self.out
    }
}

pub(crate) struct BitReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Caller guarantees enough bits remain.
    pub fn read(&mut self, width: u32) -> u32 {
        let mut v: u64 = 0;
        for _ in 0..width {
            let byte = self.bytes[self.pos / 8];
            let bit = (byte >> (7 - (self.pos % 8))) & 1;
            v = (v << 1) | bit as u64;
            self.pos += 1;
        }
        v as u32
    }

    /// True when every bit after the cursor is zero.
    pub fn rest_is_zero(&self) -> bool {
        let mut pos = self.pos;
        while pos < self.bytes.len() * 8 {
            if (self.bytes[pos / 8] >> (7 - (pos % 8))) & 1 != 0 {
                return false;
            }
            pos += 1;
        }
        true
    }
}
