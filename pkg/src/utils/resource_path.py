import os


def get_resource_path(relative_path: str) -> str:
    """
    Get the absolute path to a project resource.
    ``ALIGNPILOT_HOME`` overrides the base directory; otherwise the working directory is used.
    """
    base_path = os.environ.get("ALIGNPILOT_HOME") or os.path.abspath(".")
    return os.path.join(base_path, relative_path)
