#![allow(dead_code)]

use coordscope::synthlab::{CampaignSpec, GeneratorConfig, Window};
use coordscope::time::{day_start, SECONDS_PER_DAY, SECONDS_PER_HOUR};
use coordscope::Resolution;

pub const TEMPLATE: &str =
    "Government officials confirmed on Tuesday that the oil shipment left the port of La Guaira under naval escort";

/// Ten channels at five messages per day over 60 days with one planted
/// three-channel campaign inside a single hour.
pub fn campaign_config(seed: u64, noise_rate: f64) -> GeneratorConfig {
    let start = day_start(2025, 10, 1);
    let hour = start + 30 * SECONDS_PER_DAY + 12 * SECONDS_PER_HOUR;
    GeneratorConfig {
        channels: 10,
        span: Window::new(start, start + 60 * SECONDS_PER_DAY),
        base_rate: 5.0,
        vocabulary_seed: seed ^ 0x5eed,
        bursts: vec![],
        campaigns: vec![CampaignSpec {
            template_text: TEMPLATE.into(),
            participating_channels: vec![1, 4, 7],
            window: Window::new(hour, hour + SECONDS_PER_HOUR),
            copies_per_channel: 1,
            noise_rate,
        }],
        seed,
        resolution: Resolution::Hourly,
    }
}
