"""First-order perturbation theory of polytopes: families, weak derivatives, transport and stability."""
__version__ = "0.1.0"
