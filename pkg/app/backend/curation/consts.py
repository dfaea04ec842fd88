MIN_POSTER_SIDE = 1000
MIN_REGIONS = 2

# Gutter rows/columns: near-flat intensity close to the poster background
GUTTER_MAX_VARIANCE = 4.0
GUTTER_MAX_BACKGROUND_DISTANCE = 12.0

SOURCE_KINDS = ("natural", "poster")
RELATIONSHIPS = ("difference", "contrast", "time")

QA_ID_LENGTH = 12

VERDICT_PASS = "pass"
VERDICT_FAIL = "fail"

QA_MANIFEST_FILE = "qa_manifest.jsonl"
REVIEW_MANIFEST_FILE = "review_manifest.jsonl"
REJECTED_FILE = "rejected.jsonl"
STATS_FILE = "stats.json"
REGIONS_DIR = "regions"
