from prometheus_client import Counter, Histogram

#
# Metrics about the geometry kernel
#
POLYTOPE_CONSTRUCTIONS = Counter(
    "polyperturb_polytope_constructions",
    "Number of polytopes built, by input representation",
    ["representation"],
)
FAMILY_EVALUATIONS = Counter(
    "polyperturb_family_evaluations",
    "Number of perturbed family members evaluated",
)

#
# Metrics about the solvers
#
LP_SOLVES = Counter(
    "polyperturb_lp_solves",
    "Number of transport problems solved, by kernel",
    ["kernel"],
)
PROJECTION_ITERATIONS = Histogram(
    "polyperturb_projection_iterations",
    "Dykstra cycles per facet cone projection",
    buckets=[1, 5, 10, 50, 100, 500, 1000, 5000, 10000, 20000],
)
PROJECTION_STALLED = Counter(
    "polyperturb_projection_stalled",
    "Cone projections that hit the iteration cap",
)
CERTIFICATES = Counter(
    "polyperturb_certificates",
    "Instability certificates found, by face kind",
    ["kind"],
)

#
# Metrics about the command line runs
#
COMMAND_DURATION = Histogram(
    "polyperturb_command_duration_seconds",
    "Time spent running a subcommand",
    ["command"],
    buckets=[0.01, 0.05, 0.1, 0.5, 1, 2, 5, 10, 30, 60, 120],
)
COMMAND_RESULTS = Counter(
    "polyperturb_command_results",
    "Subcommand runs by exit code",
    ["command", "exit_code"],
)
