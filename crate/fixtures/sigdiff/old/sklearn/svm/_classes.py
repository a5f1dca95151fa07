class SVC(BaseSVC):
    """C-Support Vector Classification."""

    def __init__(self, gamma='auto', random_state=None):
        pass
