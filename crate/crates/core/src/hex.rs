//! Number parsing shared by the config and scenario readers.

/// Parses `0x`-prefixed hex or plain decimal, ignoring `_` separators.
pub fn parse_u64(text: &str) -> Result<u64, String> {
    let cleaned: String = text.trim().chars().filter(|&c| c != '_').collect();
    let parsed = match cleaned.strip_prefix("0x").or_else(|| cleaned.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => cleaned.parse::<u64>(),
    };
    parsed.map_err(|_| format!("`{text}` is not a number"))
}

pub fn parse_u32(text: &str) -> Result<u32, String> {
    let v = parse_u64(text)?;
    u32::try_from(v).map_err(|_| format!("`{text}` does not fit in 32 bits"))
}
