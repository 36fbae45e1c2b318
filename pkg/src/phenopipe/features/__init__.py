"""High-level feature extraction: per-family summarizers, app grouper, manifest."""

from .apps import APP_GROUPS, AppGroup, classify_app, default_mapping
from .manifest import Manifest, ManifestMismatch, combine_daily, default_manifest, reconciliation_markdown
from .phone import (summarize_accel_hourly, summarize_accessibility_hourly, summarize_light, summarize_power,
                    summarize_taps)
from .social import (summarize_calllog_daily, summarize_msgs_daily, summarize_sms_daily,
                     summarize_sociability_calls_daily, summarize_sociability_msgs_daily)
from .wearable import summarize_heart, summarize_sleep_daily, summarize_steps
