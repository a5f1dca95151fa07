class SVC(BaseSVC):
    """C-Support Vector Classification."""

    def __init__(self, gamma='scale', random_state=None):
        pass
