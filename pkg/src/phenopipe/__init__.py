"""Digital-phenotyping backend: encrypted ingest, staged feature extraction,
anomaly scoring, cohort comparison and static dashboards."""

__version__ = "0.1.0"
