SCHEMA_VERSION = '1.0'
# A fixed seed keeps every randomized command reproducible by default.
DEFAULT_SEED = 20240509

DEFAULT_TOLERANCE = 1e-10
FEASIBILITY_THRESHOLD = 1e-10
PROBABILITY_TOLERANCE = 1e-12
SUPERMARTINGALE_SLACK = 1e-12
CERTIFICATE_STRICTNESS = 1e-9

DEFAULT_GRID_STEP = 0.02
MAX_ENUMERATION_PERIODS = 4
DEFAULT_BSB_GRID = (400, 400, 400.0)
DEFAULT_SAMPLES = 10_000
DEFAULT_BESSEL_SAMPLES = 1_000_000
# Samples per RNG stream in the Bessel demo.  Changing this changes the
# numbers produced for a given seed.
BESSEL_BLOCK_SIZE = 65_536

COMMANDS = (
    'na1',
    'price-tree',
    'price-bsb',
    'duality',
    'verify-hedge',
    'follmer-demo',
)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_INFEASIBLE_NUMERICS = 2
EXIT_NA1_FAILURE = 3

DEFAULT_SUMMARY_TEMPLATE = """\
{{ report.command }} finished in {{ '%.3f' % duration }}s \
(exit code {{ report.exit_code }})
{% for key, value in report.results.items() %}
  {{ key }}: {{ value }}
{%- endfor %}
{% if report.warnings %}
Warnings:
{% for warning in report.warnings %}
  * {{ warning }}
{%- endfor %}
{% endif %}
"""
