from packaging.version import Version

# Metadata is kept here rather than read through importlib.metadata so that
# the version shown in logs matches the source tree even in editable checkouts.

__title__ = "SubspaceUQ"
__version__ = "0.3.0"
__description__ = "Uncertainty quantification for empirical singular subspaces"
__project_url__ = "https://github.com/subspace-uq/subspace-uq"
__author__ = "SubspaceUQ Developers"
__license__ = "GPL-3.0-or-later"
version_parsed = Version(__version__)
__copyright__ = "(C) 2024-2026 SubspaceUQ Developers"
